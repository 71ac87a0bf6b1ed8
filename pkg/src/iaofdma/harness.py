"""Monte Carlo experiment driver, result tables and CSV/plot output."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import schemes as S
from .channel import SystemDims, gen_heterogeneous_channels, gen_symmetric_channels, trial_seed

log = logging.getLogger(__name__)

LOG_ENV = "IAOFDMA_LOG_LEVEL"
CSV_HEADER = ["scheme", "snr_db", "trials", "mean_sum_rate", "std_error", "mean_dual_gap", "mean_ia_leakage"]
MODELS = ("symmetric", "heterogeneous")


def configure_logging(default: str = "WARNING") -> None:
    """Set the package log level from ``IAOFDMA_LOG_LEVEL`` (e.g. ``INFO``, ``DEBUG``)."""
    level = os.environ.get(LOG_ENV, default).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(asctime)s %(name)s %(levelname)s %(message)s")


def parse_snr_grid(text) -> tuple[float, ...]:
    """``"0:5:50"`` (inclusive start:step:stop) or a comma list such as ``"0,10,20"``."""
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    text = str(text).strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[1] <= 0:
            raise ValueError(f"bad SNR range {text!r}; expected start:step:stop with step > 0")
        start, step, stop = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 10) for i in range(max(count, 0)))
    return tuple(float(x) for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    model: str = "symmetric"
    cross_gain: float = 1.0
    cell_radius: float = 1.0
    inter_site_distance: float | None = None
    pathloss_exponent: float = 2.0
    cir_radius_fraction: float = 0.5
    n_subcarriers: int = 64
    users_per_cell: int = 4
    noise_variance: float = 1.0
    snr_grid_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)
    schemes: tuple = ("traditional", "ia_perfect", "ia_ri")
    trials: int = 50
    master_seed: int = 0
    ia_max_iters: int = 50
    ia_tol: float = 1e-8
    ia_starts: int = 1
    ia_preselect: bool = False
    dual_tol: float = 1e-3
    dual_gap_tol: float = 1e-3
    dual_max_iter: int = 300
    workers: int = 1
    out_csv: str | None = None
    out_plot: str | None = None

    def __post_init__(self):
        self.snr_grid_db = parse_snr_grid(self.snr_grid_db)
        if isinstance(self.schemes, str):
            self.schemes = tuple(s.strip() for s in self.schemes.split(",") if s.strip())
        self.schemes = tuple(self.schemes)
        self.validate()

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ValueError("the SNR grid is empty")
        if not self.schemes:
            raise ValueError("no schemes selected")
        unknown = set(self.schemes) - set(S.SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes {sorted(unknown)}")
        if "hybrid" in self.schemes and self.model != "heterogeneous":
            raise ValueError("the hybrid scheme needs the heterogeneous model")
        SystemDims(self.n_subcarriers, self.users_per_cell, self.noise_variance)

    @property
    def dims(self) -> SystemDims:
        return SystemDims(self.n_subcarriers, self.users_per_cell, self.noise_variance)

    def ia_params(self) -> S.IAParams:
        return S.IAParams(self.ia_max_iters, self.ia_tol, self.ia_starts, self.master_seed, self.ia_preselect)

    def dual_params(self) -> S.DualParams:
        return S.DualParams(tol=self.dual_tol, gap_tol=self.dual_gap_tol, max_iter=self.dual_max_iter)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or typed values, coercing to the declared field types."""
        kwargs = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if raw is None:
                continue
            key = key.strip().replace("-", "_")
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


_INT = {"n_subcarriers", "users_per_cell", "trials", "master_seed", "ia_max_iters", "ia_starts", "dual_max_iter", "workers"}
_FLOAT = {"cross_gain", "cell_radius", "inter_site_distance", "pathloss_exponent", "cir_radius_fraction",
          "noise_variance", "ia_tol", "dual_tol", "dual_gap_tol"}


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return None if raw.lower() in ("", "none") else float(raw)
    if key == "ia_preselect":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file; ``overrides`` (e.g. from CLI flags) win over the file."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(values)


def snr_to_power(snr_db: float, config: ExperimentConfig) -> float:
    """Per-BS budget for a direct-link SNR (symmetric) or a cell-edge SNR (heterogeneous)."""
    p = config.n_subcarriers * config.noise_variance * 10.0 ** (snr_db / 10.0)
    if config.model == "heterogeneous":
        p *= config.cell_radius ** config.pathloss_exponent
    return p


def draw_channels(config: ExperimentConfig, trial: int):
    seed = trial_seed(config.master_seed, trial)
    if config.model == "symmetric":
        return gen_symmetric_channels(config.dims, config.cross_gain, seed), None
    return gen_heterogeneous_channels(
        config.dims, config.cell_radius, config.inter_site_distance, config.pathloss_exponent, seed, config.cir_radius_fraction
    )


@dataclass
class TrialOutcome:
    """Per-trial values for every (scheme, snr); NaN marks a failed run."""

    trial: int
    sum_rate: dict
    dual_gap: dict
    ia_leakage: dict
    errors: list = field(default_factory=list)


def run_trial(config: ExperimentConfig, trial: int) -> TrialOutcome:
    """All schemes over the ascending SNR grid for one channel draw, warm-starting each budget from the last."""
    tensor, layout = draw_channels(config, trial)
    grid = sorted(config.snr_grid_db)
    ia, dual = config.ia_params(), config.dual_params()
    cache: dict = {}
    n = len(grid)
    out = TrialOutcome(trial, {}, {}, {})
    for name in config.schemes:
        rates, gaps, leaks = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
        try:
            if name == "traditional":
                problem = S.traditional_problem(tensor)
            elif name in ("ia_perfect", "ia_ri"):
                problem = S.ia_problem(tensor, mode="perfect" if name == "ia_perfect" else "with_ri", ia=ia, ia_cache=cache)
            elif name == "hybrid":
                problem = S.hybrid_problem(tensor, layout, ia=ia, ia_cache=cache)
            else:
                problem = None
        except Exception as exc:  # recorded per row, the run goes on
            log.exception("trial %d: building %s failed", trial, name)
            out.errors.append((name, None, repr(exc)))
            problem = False
        warm = None
        for i, snr in enumerate(grid):
            if problem is False:
                break
            budget = snr_to_power(snr, config)
            try:
                if name == "ofp":
                    res = S.run_ofp(tensor, budget=budget)
                elif name == "traditional":
                    res = S.run_traditional(tensor, budget=budget, dual=dual, warm=warm, problem=problem)
                elif name == "hybrid":
                    res = S.run_hybrid(tensor, layout, budget=budget, dual=dual, warm=warm, problem=problem)
                else:
                    res = S.run_ia(tensor, budget=budget, dual=dual, warm=warm, problem=problem)
            except Exception as exc:
                log.exception("trial %d: %s at %g dB failed", trial, name, snr)
                out.errors.append((name, snr, repr(exc)))
                continue
            warm = res
            rates[i], gaps[i] = res.sum_rate, res.dual_gap
            leaks[i] = res.diagnostics.get("ia_leakage_mean", np.nan)
        out.sum_rate[name], out.dual_gap[name], out.ia_leakage[name] = rates, gaps, leaks
    log.info("trial %d done", trial)
    return out


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    snr_db: float
    trials: int
    mean_sum_rate: float
    std_error: float
    mean_dual_gap: float
    mean_ia_leakage: float


@dataclass
class ResultTable:
    rows: list
    per_trial: dict = field(default_factory=dict)  # scheme -> (trials, snr) sum-rates
    snr_grid_db: tuple = ()
    errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def series(self, scheme: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(snr, mean, std_error) arrays for one scheme."""
        rows = [r for r in self.rows if r.scheme == scheme]
        return (np.array([r.snr_db for r in rows]), np.array([r.mean_sum_rate for r in rows]),
                np.array([r.std_error for r in rows]))

    def schemes(self) -> list[str]:
        return sorted({r.scheme for r in self.rows})


def _nanmean(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else float("nan")


def aggregate(config: ExperimentConfig, outcomes: list[TrialOutcome]) -> ResultTable:
    """Deterministic reduction over trials (ordered by trial index)."""
    outcomes = sorted(outcomes, key=lambda o: o.trial)
    grid = sorted(config.snr_grid_db)
    rows, per_trial, errors = [], {}, []
    for o in outcomes:
        errors.extend((o.trial, *e) for e in o.errors)
    for name in sorted(config.schemes):
        rates = np.array([o.sum_rate[name] for o in outcomes])
        gaps = np.array([o.dual_gap[name] for o in outcomes])
        leaks = np.array([o.ia_leakage[name] for o in outcomes])
        per_trial[name] = rates
        for i, snr in enumerate(grid):
            ok = np.isfinite(rates[:, i])
            n = int(ok.sum())
            vals = rates[ok, i]
            mean = float(vals.mean()) if n else float("nan")
            se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            rows.append(ResultRow(name, float(snr), n, mean, se, _nanmean(gaps[ok, i]), _nanmean(leaks[ok, i])))
    return ResultTable(rows, per_trial, tuple(grid), errors)


def run_experiment(config: ExperimentConfig, progress=None) -> ResultTable:
    """Run every trial and aggregate; the table depends only on ``config``, not on worker count or order."""
    started = time.perf_counter()
    trials = range(config.trials)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(run_trial, [config] * config.trials, trials))
    else:
        outcomes = []
        for t in trials:
            outcomes.append(run_trial(config, t))
            if progress:
                progress(t + 1, config.trials)
    log.info("experiment finished in %.1f s", time.perf_counter() - started)
    return aggregate(config, outcomes)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(table: ResultTable, path) -> None:
    if not table.rows:
        raise ValueError("cannot write an empty result table")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in table.rows:
            writer.writerow([r.scheme, _fmt(r.snr_db), r.trials, _fmt(r.mean_sum_rate), _fmt(r.std_error),
                             _fmt(r.mean_dual_gap), _fmt(r.mean_ia_leakage)])


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [ResultRow(r["scheme"], float(r["snr_db"]), int(r["trials"]), float(r["mean_sum_rate"]),
                          float(r["std_error"]), float(r["mean_dual_gap"]), float(r["mean_ia_leakage"])) for r in reader]


def emit_plot(table: ResultTable, path) -> None:
    """Sum-rate versus SNR per scheme with error bars, as a vector image (format from the suffix, SVG by default)."""
    if not table.rows:
        raise ValueError("cannot plot an empty result table")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for name in table.schemes():
        snr, mean, se = table.series(name)
        ax.errorbar(snr, mean, yerr=2 * se, marker="o", ms=3, capsize=2, label=name)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("sum-rate (bps/Hz)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata={"Date": None} if path.suffix in ("", ".svg") else None)
    plt.close(fig)
