import pytest

from monadring.games import GameDefs, best_response, deviation_gain, is_epsilon_equilibrium


def matching_pennies():
    table = {
        ("H", "H"): (1, -1), ("H", "T"): (-1, 1),
        ("T", "H"): (-1, 1), ("T", "T"): (1, -1),
    }
    return GameDefs(
        players=(0, 1),
        strategy_spaces=(("H", "T"), ("H", "T")),
        payoff=lambda i, profile: table[profile][i],
    )


def coordination():
    table = {
        ("A", "A"): (2, 2), ("A", "B"): (0, 0),
        ("B", "A"): (0, 0), ("B", "B"): (1, 1),
    }
    return GameDefs(
        players=(0, 1),
        strategy_spaces=(("A", "B"), ("A", "B")),
        payoff=lambda i, profile: table[profile][i],
    )


class TestBestResponse:
    def test_matching_pennies(self):
        defs = matching_pennies()
        # matcher (player 0) wants to match Heads
        assert best_response(defs, 0, (None, "H")) == "H"
        # mismatcher (player 1) wants to mismatch Heads
        assert best_response(defs, 1, ("H", None)) == "T"

    def test_tie_breaks_to_lowest_index(self):
        defs = GameDefs(
            players=(0, 1),
            strategy_spaces=(("x", "y"), ("x", "y")),
            payoff=lambda i, profile: 0.0,
        )
        assert best_response(defs, 0, (None, "x")) == "x"

    def test_empty_space_rejected(self):
        with pytest.raises(ValueError):
            GameDefs(players=(0,), strategy_spaces=((),), payoff=lambda i, p: 0)


class TestEpsilonEquilibrium:
    def test_exact_nash_passes_at_zero(self):
        defs = coordination()
        assert is_epsilon_equilibrium(defs, ("A", "A"), epsilon=0)
        assert is_epsilon_equilibrium(defs, ("B", "B"), epsilon=0)

    def test_non_equilibrium_fails(self):
        defs = coordination()
        assert not is_epsilon_equilibrium(defs, ("A", "B"), epsilon=0)

    def test_near_optimum_passes_with_slack(self):
        # profile within 0.05 of the optimum passes an epsilon=0.1 check
        table = {
            ("A", "A"): (1.0, 1.0), ("A", "B"): (0.95, 1.0),
            ("B", "A"): (0.0, 0.0), ("B", "B"): (1.0, 0.0),
        }
        defs = GameDefs(
            players=(0, 1),
            strategy_spaces=(("A", "B"), ("A", "B")),
            payoff=lambda i, profile: table[profile][i],
        )
        assert deviation_gain(defs, 0, ("A", "B")) == pytest.approx(0.05)
        assert is_epsilon_equilibrium(defs, ("A", "B"), epsilon=0.1)
        assert not is_epsilon_equilibrium(defs, ("A", "B"), epsilon=0.01)

    def test_matching_pennies_has_no_pure_equilibrium(self):
        defs = matching_pennies()
        for a in ("H", "T"):
            for b in ("H", "T"):
                assert not is_epsilon_equilibrium(defs, (a, b), epsilon=0)
