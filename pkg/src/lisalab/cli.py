"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_run_config
from .errors import ConfigError, DataError, DivergenceError, DomainError, ShapeError
from .harness import SWEEP_AXES, execute_run, load_quad_config, run_quad_check, sweep
from .instrument import MODEL_PRESETS, estimate_memory
from .plotdata import merge_runs, render_pngs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    log, outdir = execute_run(cfg)
    print(f"method={log.method} steps={len(log.steps)} "
          f"final_loss={log.final_loss():.6f} out={outdir}")
    if log.status == "diverged":
        print(f"diverged at step {log.diverged_at}; partial logs kept", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    values = [int(v) for v in args.values.split(",") if v != ""]
    rows, summary = sweep(cfg, args.axis, values)
    for row in rows:
        print(f"{args.axis}={row['axis_value']} final_loss={row['final_loss']} "
              f"status={row['status']}")
    print(f"summary: {summary}")
    return EXIT_OK


def _cmd_quad_check(args) -> int:
    raw = load_quad_config(args.config)
    rows, written = run_quad_check(raw)
    print(f"{'T':>8} {'avg_subopt':>16} {'avg_subopt*sqrt(T)':>20}")
    for r in rows:
        print(f"{r.horizon:>8} {r.avg_suboptimality:>16.8f} "
              f"{r.scaled_by_sqrt_t:>20.8f}")
    if written:
        print(f"table: {written}")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    out = merge_runs(args.run_dirs, args.out)
    print(f"merged CSVs under {out}")
    if args.render:
        for png in render_pngs(out):
            print(f"rendered {png}")
    return EXIT_OK


def _cmd_estimate_memory(args) -> int:
    est = estimate_memory(
        args.preset,
        args.method,
        rank=args.rank,
        gamma=args.gamma,
        bytes_per_param=args.bytes_per_param,
        batch=args.batch,
        seq=args.seq,
    )
    gib = 1024 ** 3
    print(f"preset={args.preset} method={args.method}")
    for key, val in est.to_dict().items():
        if key == "method":
            continue
        print(f"  {key:>12}: {val:>16,d} bytes ({val / gib:.2f} GiB)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lisalab",
        description="Desk-scale training runs: full-parameter, LoRA, and "
                    "layerwise-sampled freezing, with shared logging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one training run from a config file")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="run an ablation sweep over one axis")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("quad-check", help="convex-quadratic convergence table")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_quad_check)

    p = sub.add_parser("plot-data", help="merge exported runs into plot-ready CSVs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--render", action="store_true", help="also render PNGs")
    p.set_defaults(fn=_cmd_plot_data)

    p = sub.add_parser("estimate-memory", help="analytic peak-memory accounting")
    p.add_argument("--preset", required=True, choices=sorted(MODEL_PRESETS))
    p.add_argument("--method", required=True, choices=("full", "lora", "lisa"))
    p.add_argument("--rank", type=int)
    p.add_argument("--gamma", type=int)
    p.add_argument("--bytes-per-param", type=int, default=2)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seq", type=int)
    p.set_defaults(fn=_cmd_estimate_memory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DomainError, ShapeError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
