"""Command-line front end.

Subcommands:
    optimize        fit buffered-decay noise parameters for a schema
    eval            loss report for saved parameters, a saved matrix, or
                    the tree baseline
    sweep           loss grid over min-separation values, CSV out
    noisegen        stream correlated noise rows to CSV
    account         zCDP and (epsilon, delta) for a sensitivity / sigma pair
    simulate        run the federated-averaging simulator from a JSON config
    bench-inverse   timing of the closed-form decoder vs the O(n^2) recurrence

All floats are printed with repr (shortest round-trip form), so outputs
are byte-reproducible across runs on the same platform.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from corrnoise.accountant import METHOD_LABEL, eps_of_zcdp, zcdp_of
from corrnoise.blt_core import (
    BltParams,
    blt_coefs,
    blt_inverse_coefs,
    load_params,
    make_noise_generator,
    save_params,
    stream_mult_inverse,
    toeplitz_inverse_coefs,
)
from corrnoise.blt_optimizer import OptimizerConfig, optimize_blt
from corrnoise.ftrl_sim import (
    TrainConfig,
    make_population,
    run_training,
    write_metrics_csv,
    write_participation_csv,
)
from corrnoise.loss_metrics import blt_mechanism_loss, mechanism_loss
from corrnoise.participation import ParticipationSchema, max_participations
from corrnoise.tree_baseline import eval_tree, load_strategy_matrix

SWEEP_HEADER = (
    "mechanism,n,b,k,sens,max_error,rms_error,max_loss,rms_loss,sens_method,status"
)


def _schema_args(p: argparse.ArgumentParser, with_k_default=True):
    p.add_argument("--n", type=int, required=True, help="number of rounds")
    p.add_argument("--min-sep", type=int, default=1, help="min rounds between repeats")
    p.add_argument(
        "--max-part",
        type=int,
        default=None,
        help="participation cap (default: worst case for n and min-sep)",
    )


def _make_schema(n, min_sep, max_part):
    k = max_part if max_part is not None else max_participations(n, min_sep)
    return ParticipationSchema(n=n, b=min_sep, k=k)


def _loss_dict(bundle):
    return {
        "n": bundle.schema.n,
        "b": bundle.schema.b,
        "k": bundle.schema.k,
        "sens": bundle.sens,
        "max_error": bundle.max_error,
        "rms_error": bundle.rms_error,
        "max_loss": bundle.max_loss,
        "rms_loss": bundle.rms_loss,
        "sens_method": bundle.sens_method,
    }


def _print_json(doc, stream=None):
    (stream or sys.stdout).write(json.dumps(doc, indent=2) + "\n")


def cmd_optimize(args) -> int:
    schema = _make_schema(args.n, args.min_sep, args.max_part)
    config = OptimizerConfig(
        schema=schema,
        d=args.buffers,
        objective=args.objective,
        restarts=args.restarts,
        seed=args.seed,
    )
    result = optimize_blt(config)
    bundle = blt_mechanism_loss(result.params, schema)
    doc = _loss_dict(bundle)
    doc["objective"] = args.objective
    doc["converged"] = result.converged
    doc["iterations"] = result.iterations
    _print_json(doc)
    if args.out:
        save_params(
            args.out,
            result.params,
            opt_n=schema.n,
            opt_min_sep=schema.b,
            opt_max_part=schema.k,
            objective=args.objective,
        )
    if not result.converged:
        print("optimizer did not converge", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    schema = _make_schema(args.n, args.min_sep, args.max_part)
    if args.params:
        params, _ = load_params(args.params)
        bundle = blt_mechanism_loss(params, schema, args.noise_multiplier)
    elif args.matrix:
        C = load_strategy_matrix(args.matrix)
        bundle = mechanism_loss(C, schema, args.noise_multiplier)
    else:
        bundle = eval_tree(args.n, schema, noise_multiplier=args.noise_multiplier)
    _print_json(_loss_dict(bundle))
    return 0


def _sweep_cell(name, kind, payload, n, b, k_opt, noise_multiplier):
    k = k_opt if k_opt is not None else max_participations(n, b)
    if (k - 1) * b >= n:
        return {
            "mechanism": name,
            "n": n,
            "b": b,
            "k": k,
            "status": "infeasible",
        }
    schema = ParticipationSchema(n=n, b=b, k=k)
    try:
        if kind == "params":
            bundle = blt_mechanism_loss(payload, schema, noise_multiplier)
        elif kind == "tree":
            bundle = eval_tree(n, schema, noise_multiplier=noise_multiplier)
        else:  # identity: C = I, white noise
            c = np.zeros(n)
            c[0] = 1.0
            bundle = mechanism_loss(c, schema, noise_multiplier)
    except Exception as exc:  # surface per-cell failures in the table
        return {"mechanism": name, "n": n, "b": b, "k": k, "status": f"error:{exc}"}
    row = _loss_dict(bundle)
    row["mechanism"] = name
    row["status"] = "ok"
    return row


def cmd_sweep(args) -> int:
    mechanisms = []
    for path in args.params or []:
        params, _ = load_params(path)
        name = os.path.splitext(os.path.basename(path))[0]
        mechanisms.append((name, "params", params))
    if args.tree:
        mechanisms.append(("tree", "tree", None))
    if args.identity:
        mechanisms.append(("identity", "identity", None))
    if not mechanisms:
        print("no mechanisms given (use --params / --tree / --identity)", file=sys.stderr)
        return 1

    b_values = list(range(args.b_start, args.b_stop + 1, args.b_step))
    workers = max(1, int(os.environ.get("CORRNOISE_THREADS", "4")))
    jobs = [
        (name, kind, payload, args.n, b, args.max_part, args.noise_multiplier)
        for (name, kind, payload) in mechanisms
        for b in b_values
    ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda j: _sweep_cell(*j), jobs))

    lines = [SWEEP_HEADER]
    for row in rows:  # submission order kept: deterministic output
        if row["status"] == "ok":
            lines.append(
                f"{row['mechanism']},{row['n']},{row['b']},{row['k']},"
                f"{row['sens']!r},{row['max_error']!r},{row['rms_error']!r},"
                f"{row['max_loss']!r},{row['rms_loss']!r},{row['sens_method']},ok"
            )
        else:
            lines.append(
                f"{row['mechanism']},{row['n']},{row['b']},{row['k']},"
                f",,,,,,{row['status']}"
            )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_noisegen(args) -> int:
    params, _ = load_params(args.params)
    state = make_noise_generator(
        params,
        m=args.dim,
        noise_std=args.noise_std,
        seed=args.seed,
        max_rounds=args.rounds,
    )
    lines = ["round," + ",".join(f"z{j}" for j in range(args.dim))]
    for t in range(args.rounds):
        row, state = stream_mult_inverse(state)
        lines.append(f"{t}," + ",".join(repr(float(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_account(args) -> int:
    rho = zcdp_of(args.sens, args.sigma)
    eps = eps_of_zcdp(rho, args.delta, refined=args.refined)
    _print_json(
        {"rho": rho, "epsilon": eps, "sens": args.sens, "method": METHOD_LABEL}
    )
    return 0


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        doc = json.load(fh)
    pop_doc = dict(doc["population"])
    train_doc = dict(doc["training"])
    mechanism = None
    params_file = train_doc.pop("params_file", None)
    if params_file:
        mechanism, _ = load_params(params_file)
    population = make_population(**pop_doc)
    config = TrainConfig(mechanism=mechanism, **train_doc)
    result = run_training(config, population)
    os.makedirs(args.outdir, exist_ok=True)
    write_metrics_csv(os.path.join(args.outdir, "metrics.csv"), result.metrics)
    write_participation_csv(
        os.path.join(args.outdir, "participation.csv"), result.participation
    )
    _print_json(
        {
            "rounds": config.rounds,
            "final_eval_loss": result.metrics[-1]["eval_loss"],
            "realized_b": result.realized_b,
            "realized_k": result.realized_k,
            "rho_realized": result.rho_realized,
            "sigma_zeta": result.sigma_zeta,
        }
    )
    return 0


def cmd_bench_inverse(args) -> int:
    rng = np.random.default_rng(7)
    d = args.buffers
    theta = np.sort(rng.uniform(0.3, 0.999, d))[::-1].copy()
    omega = rng.uniform(0.05, 0.5, d)
    omega *= 0.9 / omega.sum()
    params = BltParams(theta, omega)

    n_small = min(args.n, 2048)
    chat_rec = toeplitz_inverse_coefs(blt_coefs(params, n_small))
    chat_pair = blt_inverse_coefs(params, n_small)
    agree = float(np.max(np.abs(chat_rec - chat_pair)))
    print(f"agreement at n={n_small}: max abs diff {agree!r}")

    n = args.n
    c = blt_coefs(params, n)
    t0 = time.perf_counter()
    toeplitz_inverse_coefs(c)
    t_rec = time.perf_counter() - t0
    t0 = time.perf_counter()
    blt_inverse_coefs(params, n)
    t_pair = time.perf_counter() - t0
    print(f"n={n}")
    print(f"  closed-form inverse (O(n d)):  {t_pair:.4f} s")
    print(f"  dense recurrence    (O(n^2)):  {t_rec:.4f} s")
    print(f"  speedup: {t_rec / max(t_pair, 1e-12):.1f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="corrnoise",
        description="correlated-noise mechanisms for private learning",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="fit noise parameters for a schema")
    _schema_args(p)
    p.add_argument("--buffers", type=int, default=3, help="decay buffers d")
    p.add_argument("--objective", choices=("max", "rms"), default="max")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None, help="write params JSON here")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="loss report for a mechanism")
    _schema_args(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--params", type=str, help="params JSON file")
    src.add_argument("--matrix", type=str, help="saved strategy matrix")
    src.add_argument("--tree", action="store_true", help="binary-tree baseline")
    p.add_argument("--noise-multiplier", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="loss grid over min-separation values")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b-start", type=int, required=True)
    p.add_argument("--b-stop", type=int, required=True)
    p.add_argument("--b-step", type=int, default=10)
    p.add_argument("--max-part", type=int, default=None)
    p.add_argument("--noise-multiplier", type=float, default=1.0)
    p.add_argument("--params", type=str, nargs="*", help="params JSON files")
    p.add_argument("--tree", action="store_true")
    p.add_argument("--identity", action="store_true")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noisegen", help="stream correlated noise rows to CSV")
    p.add_argument("--params", type=str, required=True)
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_noisegen)

    p = sub.add_parser("account", help="zCDP and epsilon for sens / sigma")
    p.add_argument("--sens", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--delta", type=float, default=1e-10)
    p.add_argument("--refined", action="store_true")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("simulate", help="run the training simulator")
    p.add_argument("--config", type=str, required=True, help="JSON config file")
    p.add_argument("--outdir", type=str, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-inverse", help="decoder timing comparison")
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--buffers", type=int, default=4)
    p.set_defaults(func=cmd_bench_inverse)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
