"""Command-line entry point.

``iaofdma run`` executes an experiment locally (or on a running service
with ``--server``) and writes the CSV table and an optional plot.
``iaofdma serve`` starts the HTTP service.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .harness import ExperimentConfig, configure_logging, emit_csv, emit_plot, load_config, run_experiment

log = logging.getLogger(__name__)

# CLI flag -> config key
FLAG_KEYS = {
    "model": "model",
    "h": "cross_gain",
    "n": "n_subcarriers",
    "k": "users_per_cell",
    "snr": "snr_grid_db",
    "trials": "trials",
    "seed": "master_seed",
    "schemes": "schemes",
    "out": "out_csv",
    "plot": "out_plot",
    "workers": "workers",
    "preselect": "ia_preselect",
    "ia_iters": "ia_max_iters",
    "rho": "cir_radius_fraction",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iaofdma", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment")
    run.add_argument("--config", help="flat key = value config file; flags below override it")
    run.add_argument("--model", choices=["symmetric", "heterogeneous"])
    run.add_argument("--h", type=float, help="cross-link gain of the symmetric model")
    run.add_argument("--n", type=int, help="number of subcarriers")
    run.add_argument("--k", type=int, help="users per cell")
    run.add_argument("--snr", help="SNR grid in dB, start:step:stop or a comma list")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--schemes", help="comma list out of traditional,ia_perfect,ia_ri,hybrid,ofp")
    run.add_argument("--out", help="CSV output path")
    run.add_argument("--plot", help="plot output path (SVG)")
    run.add_argument("--workers", type=int, help="worker processes for trials")
    run.add_argument("--preselect", action="store_const", const=True, help="top-2 user preselection for IA triples")
    run.add_argument("--ia-iters", dest="ia_iters", type=int)
    run.add_argument("--rho", type=float, help="CIR radius as a fraction of the cell radius")
    run.add_argument("--server", help="base URL of a running service; the experiment runs there")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items() if getattr(args, flag) is not None}
    if args.config:
        return load_config(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def run_remote(config: ExperimentConfig, server: str):
    import httpx

    from .schemas import ExperimentRequest, ExperimentResponse

    body = ExperimentRequest(**{k: v for k, v in vars(config).items() if k in ExperimentRequest.model_fields})
    resp = httpx.post(server.rstrip("/") + "/experiments", json=body.model_dump(), timeout=None)
    resp.raise_for_status()
    return ExperimentResponse.model_validate(resp.json()).to_table()


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("iaofdma.service:app", host=args.host, port=args.port)
        return 0

    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    started = time.perf_counter()
    if args.server:
        table = run_remote(config, args.server)
    else:
        table = run_experiment(config, progress=lambda i, n: log.info("trial %d/%d", i, n))
    out = config.out_csv or "results.csv"
    emit_csv(table, out)
    if config.out_plot:
        emit_plot(table, config.out_plot)
    for name in table.schemes():
        snr, mean, _ = table.series(name)
        print(f"{name:12s} " + " ".join(f"{s:g}:{m:.3f}" for s, m in zip(snr, mean)))
    for err in table.errors:
        print(f"failed: {err}", file=sys.stderr)
    print(f"wrote {out} in {time.perf_counter() - started:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
