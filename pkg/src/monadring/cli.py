"""Command-line entry points.

``monadring simulate`` runs a scenario file and reports metrics;
``monadring equilibrium`` solves the voting-game strategy and optionally
runs the mechanism optimizer; ``monadring crypto-demo`` prints small
keygen/encrypt/share transcripts for the crypto layers.

Exit codes: 0 clean run, 2 invariant breach, 3 scenario error.
"""

from __future__ import annotations

import argparse
import dataclasses
import random
import sys

from . import blind, sim
from .fhe import FheParams, decode_int, decrypt, encode_int, encrypt, hom_add, keygen
from .scenario import ScenarioError, load_scenario
from .shamir import FieldParams, Share, SharingPolicy, reconstruct, share
from .voting import (
    MechanismObjective,
    NonConvergence,
    Vote,
    VotingGameParams,
    expected_payoff_grad_xi,
    optimize_mechanism,
    posterior_grad_xi,
    solve_equilibrium_xi,
)


def _cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
    except (OSError, ScenarioError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 3
    try:
        result = sim.run(scenario)
    except sim.InvariantBreach as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return 2
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as handle:
            handle.write(result.metrics.to_csv())
    if args.log_out:
        with open(args.log_out, "w", encoding="utf-8") as handle:
            handle.write("\n".join(result.log) + "\n")
    print(result.metrics.summary(), end="")
    return 0


def _cmd_equilibrium(args) -> int:
    params = VotingGameParams(n=args.n, theta_top=args.theta_top,
                              theta_bot=args.theta_bot,
                              alpha=args.alpha, beta=args.beta)
    solution = solve_equilibrium_xi(params)
    print(f"xi* = {solution.xi:.6f}")
    print(f"trivial equilibria: xi=0 (stable={solution.boundary_stable[0]}), "
          f"xi=1 (stable={solution.boundary_stable[1]})")
    print(f"posterior gradient residual at xi*: {solution.posterior_residual:.6e}")
    for vote, name in ((Vote.TOP, "top"), (Vote.BOT, "bot")):
        grad = float(expected_payoff_grad_xi(params, solution.xi, vote))
        print(f"conditional-{name} payoff gradient: {grad:.6e}")
    if args.optimize:
        objective = MechanismObjective(lam=args.lam, lam1=args.lam1, lam2=args.lam2)
        try:
            result = optimize_mechanism(
                objective, (float(params.theta_top), float(params.theta_bot),
                            solution.xi), params, max_iters=args.iterations)
            trace = result.trace
            final = (result.theta_top, result.theta_bot, result.xi)
        except NonConvergence as exc:
            trace = exc.trace
            final = None
        print("iter,F,xi,theta_top,theta_bot")
        tt, tb, xi = float(params.theta_top), float(params.theta_bot), solution.xi
        for i, value in enumerate(trace):
            print(f"{i},{value:.9f},{xi:.6f},{tt:.6f},{tb:.6f}")
        if final is None:
            print("did not converge", file=sys.stderr)
            return 2
        print(f"optimum: theta_top={final[0]:.6f} theta_bot={final[1]:.6f} "
              f"xi={final[2]:.6f}")
    return 0


def _cmd_fhe(args) -> int:
    params = FheParams(ring_degree=args.ring_degree,
                       ciphertext_modulus=1 << args.ciphertext_bits,
                       plaintext_modulus=1 << args.plaintext_bits)
    rng = random.Random(args.seed)
    keys = keygen(params, rng)
    print(f"params: N={params.ring_degree} q=2^{args.ciphertext_bits} "
          f"p=2^{args.plaintext_bits} sigma={params.gaussian_stddev}")
    print(f"fresh noise bound: {params.fresh_noise_bound}")
    a, b = args.a % params.plaintext_modulus, args.b % params.plaintext_modulus
    ct_a = encrypt(keys.public_key, encode_int(a, params), params, rng)
    ct_b = encrypt(keys.public_key, encode_int(b, params), params, rng)
    print(f"Enc({a}): budget={ct_a.noise_budget}")
    print(f"Enc({b}): budget={ct_b.noise_budget}")
    total = hom_add(ct_a, ct_b)
    print(f"Enc({a})+Enc({b}): budget={total.noise_budget} "
          f"decryptable={total.decryptable}")
    print(f"Dec = {decode_int(decrypt(keys.secret_key, total))} "
          f"(expected {(a + b) % params.plaintext_modulus})")
    return 0


def _cmd_shamir(args) -> int:
    policy = SharingPolicy(n=args.n, t=args.t, field=FieldParams(args.prime))
    if args.reconstruct:
        with open(args.reconstruct, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
        header = lines[0].split()
        if len(header) != 3 or header[0] != str(policy.prime):
            print("share file header does not match P n t", file=sys.stderr)
            return 3
        shares = [Share(int(x), int(y)) for x, y in
                  (line.split() for line in lines[1:] if line.strip())]
        print(f"secret = {reconstruct(shares, policy)}")
        return 0
    rng = random.Random(args.seed)
    shares = share(args.secret, policy, rng)
    for item in shares:
        print(f"({item.x},{item.y})")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(f"{policy.prime} {policy.n} {policy.t}\n")
            for item in shares:
                handle.write(f"{item.x} {item.y}\n")
    return 0


def _cmd_blind_vote(args) -> int:
    votes = [int(v) for v in args.votes.split(",")]
    if any(v not in (0, 1) for v in votes):
        print("votes must be a comma list of 0/1 bits", file=sys.stderr)
        return 3
    n = len(votes)
    if args.t > n:
        print("threshold t cannot exceed the number of voters", file=sys.stderr)
        return 3
    params = FheParams(ring_degree=64, ciphertext_modulus=1 << 40,
                       plaintext_modulus=1 << 16)
    rng = random.Random(args.seed)
    setup = blind.setup_round(n, args.t, params, rng)
    strategies = []
    for i, bit in enumerate(votes):
        strategy = blind.encrypt_strategy(setup, i + 1, bit, rng, nonce=i)
        strategies.append(strategy)
        digest = blind.ciphertext_digest(strategy.ciphertext)
        print(f"voter {i + 1}: ballot digest {digest[:16]}")
    tally_ct = blind.homomorphic_tally(strategies)
    print(f"tally ciphertext digest {blind.ciphertext_digest(tally_ct)[:16]}")
    bundles = list(setup.aggregation_shares[:args.t])
    plain, transcript = blind.threshold_decrypt(tally_ct, bundles,
                                                setup.policy, params)
    print(f"contributors: {transcript.contributors}")
    print(f"recomputation digest {transcript.recomputation_digest[:16]}")
    verified = blind.verify_transcript(transcript, tally_ct, bundles,
                                       setup.policy, params)
    print(f"transcript verified: {verified}")
    print(f"decrypted tally: {decode_int(plain)} (plain sum {sum(votes)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monadring",
        description="Token-ring subnet consensus simulator and voting-game tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario file")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_sim.add_argument("--metrics-out", default=None)
    p_sim.add_argument("--log-out", default=None)
    p_sim.set_defaults(func=_cmd_simulate)

    p_eq = sub.add_parser("equilibrium", help="solve the voting-game strategy")
    p_eq.add_argument("--n", type=int, required=True)
    p_eq.add_argument("--theta-top", required=True)
    p_eq.add_argument("--theta-bot", required=True)
    p_eq.add_argument("--alpha", type=float, default=1.0)
    p_eq.add_argument("--beta", type=float, default=1.0)
    p_eq.add_argument("--optimize", action="store_true")
    p_eq.add_argument("--iterations", type=int, default=10_000)
    p_eq.add_argument("--lam", type=float, default=0.0)
    p_eq.add_argument("--lam1", type=float, default=0.0)
    p_eq.add_argument("--lam2", type=float, default=0.0)
    p_eq.set_defaults(func=_cmd_equilibrium)

    p_demo = sub.add_parser("crypto-demo", help="crypto layer transcripts")
    demo_sub = p_demo.add_subparsers(dest="demo", required=True)

    p_fhe = demo_sub.add_parser("fhe", help="keygen/encrypt/add/decrypt transcript")
    p_fhe.add_argument("--seed", type=int, default=0)
    p_fhe.add_argument("--ring-degree", type=int, default=64)
    p_fhe.add_argument("--ciphertext-bits", type=int, default=40)
    p_fhe.add_argument("--plaintext-bits", type=int, default=16)
    p_fhe.add_argument("--a", type=int, default=2)
    p_fhe.add_argument("--b", type=int, default=3)
    p_fhe.set_defaults(func=_cmd_fhe)

    p_sh = demo_sub.add_parser("shamir", help="split or reconstruct a secret")
    p_sh.add_argument("--n", type=int, default=5)
    p_sh.add_argument("--t", type=int, default=3)
    p_sh.add_argument("--secret", type=int, default=12345)
    p_sh.add_argument("--seed", type=int, default=0)
    p_sh.add_argument("--prime", type=int, default=(1 << 61) - 1)
    p_sh.add_argument("--out", default=None, help="write a share file")
    p_sh.add_argument("--reconstruct", default=None,
                      help="read a share file and recover the secret")
    p_sh.set_defaults(func=_cmd_shamir)

    p_bv = demo_sub.add_parser("blind-vote", help="encrypted ballots and tally")
    p_bv.add_argument("--n", type=int, default=None, help="ignored; len(votes) rules")
    p_bv.add_argument("--t", type=int, default=2)
    p_bv.add_argument("--votes", default="1,0,1")
    p_bv.add_argument("--seed", type=int, default=0)
    p_bv.set_defaults(func=_cmd_blind_vote)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
