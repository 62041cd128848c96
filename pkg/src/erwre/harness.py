"""Seeded replica ensembles and their reports.

A run is a pure function of its :class:`ExperimentConfig`.  Replica ``r``
draws its environment from ``derive_seed(seed, r)`` and its coins from
stream ``r`` of the master seed, so dropping replicas never changes the
rows of the others, and work items can be farmed out to any number of
processes and merged back by index.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import (UnsupportedRegimeError, binomial_interval, classify_regime_thm1,
                       example_tail_descriptor, hit_prob_closed, hit_prob_monte_carlo,
                       hit_prob_oracle, two_sample_test)
from .branching_engine import coupled_excursion, simulate_bpre, simulate_rde
from .counters import derive_seed
from .env_model import (CoinSource, Environment, EnvironmentSpec, ExampleLaw,
                        draw_m_many, draw_p_many, mean_log_rho, rho)
from .walk_engine import TIMEOUT, WalkSummary, excursion_upcrossings, run_walk

SUBCOMMANDS = ("walk", "excursion", "couple", "bpre", "rde", "hitprob", "phase")

DEFAULT_HORIZON = {"walk": 10**5, "excursion": 10**5, "couple": 10**6, "bpre": 10**4,
                   "rde": 1, "hitprob": 1, "phase": 10**5}
DEFAULT_REPLICAS = {"rde": 1000, "hitprob": 20, "phase": 200}
DEFAULT_KMAX = {"rde": 10, "hitprob": 5}
DEFAULT_LAMBDAS = (0.5, 1.0, 2.0)
DEFAULT_BETAS = (1.0, 3.0)
HITPROB_Z = (1, 2)

COLUMNS = {
    "walk": WalkSummary.CSV_COLUMNS,
    "excursion": WalkSummary.CSV_COLUMNS,
    "couple": ("replica", "t0_or_timeout", "k", "U_k", "V_k", "indicator", "violation"),
    "bpre": ("replica", "k", "value", "extinct_at"),
    "rde": ("sample", "x_n", "w_n"),
    "hitprob": ("env", "z", "k", "closed", "oracle", "abs_diff", "mc_hits", "trials",
                "mc_estimate", "std_err", "z_score", "within_4se"),
    "phase": ("lambda", "beta", "replica", "seed", "h_short", "final_short", "final",
              "returns_short", "returns"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    env: EnvironmentSpec = EnvironmentSpec()
    seed: int = 0
    replicas: Optional[int] = None
    horizon: Optional[int] = None
    k_max: Optional[int] = None
    lambdas: tuple = ()
    betas: tuple = ()
    out_format: str = "csv"
    out_path: Optional[str] = None
    workers: int = 1
    trials: int = 10**4
    level: float = 0.01

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        if self.replicas is None:
            object.__setattr__(self, "replicas", DEFAULT_REPLICAS.get(self.subcommand, 100))
        if self.horizon is None:
            object.__setattr__(self, "horizon", DEFAULT_HORIZON[self.subcommand])
        if self.k_max is None:
            object.__setattr__(self, "k_max", DEFAULT_KMAX.get(self.subcommand, 1))
        if self.subcommand == "phase":
            if not self.lambdas:
                object.__setattr__(self, "lambdas", DEFAULT_LAMBDAS)
            if not self.betas:
                object.__setattr__(self, "betas", DEFAULT_BETAS)
        elif isinstance(self.env.cookie_law, ExampleLaw) and not (self.lambdas or self.betas):
            object.__setattr__(self, "lambdas", (self.env.cookie_law.lam,))
            object.__setattr__(self, "betas", (self.env.cookie_law.beta,))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "betas", tuple(float(v) for v in self.betas))
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.k_max < 1:
            raise ValueError("kmax must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.out_format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.subcommand == "phase":
            if any(v <= 0 for v in self.lambdas + self.betas):
                raise ValueError("phase grid values must be positive")
        else:
            example = isinstance(self.env.cookie_law, ExampleLaw)
            if example and (len(self.lambdas) != 1 or len(self.betas) != 1):
                raise ValueError("the example cookie law needs exactly one lambda and one beta")
            if not example and (self.lambdas or self.betas):
                raise ValueError("lambda/beta apply only to the example cookie law")
            if example and (self.lambdas[0], self.betas[0]) != (
                    self.env.cookie_law.lam, self.env.cookie_law.beta):
                raise ValueError("lambda/beta disagree with the cookie law")

    def to_mapping(self):
        out = {"subcommand": self.subcommand, "seed": self.seed, "replicas": self.replicas,
               "horizon": self.horizon, "kmax": self.k_max}
        out.update(self.env.to_mapping())
        if self.subcommand == "phase":
            out["lambda"] = list(self.lambdas)
            out["beta"] = list(self.betas)
        if self.subcommand == "hitprob":
            out["trials"] = self.trials
        if self.subcommand == "rde":
            out["level"] = self.level
        return out


@dataclass
class EnsembleReport:
    subcommand: str
    config: dict
    columns: tuple
    rows: list
    aggregate: dict = field(default_factory=dict)

    @property
    def violations(self):
        return int(self.aggregate.get("violations", 0))

    def to_dict(self):
        return {"subcommand": self.subcommand, "config": self.config,
                "columns": list(self.columns), "rows": self.rows,
                "aggregate": self.aggregate}


# --------------------------------------------------------------------------
# work items

def replica_environment(config, r, spec=None):
    return Environment(spec or config.env, derive_seed(config.seed, r))


def _walk_item(config, r):
    env = replica_environment(config, r)
    coins = CoinSource(config.seed, r)
    if config.subcommand == "walk":
        s = run_walk(0, env, coins, config.horizon)
    else:
        s = excursion_upcrossings(env, coins, config.horizon)
    row = s.csv_row(r, derive_seed(config.seed, r))
    if config.subcommand == "excursion":
        # JSON only; the CSV writer keeps to the fixed columns
        row["upcrossings"] = {str(k): v for k, v in s.upcrossings.items()}
    return [row]


def _couple_item(config, r):
    env = replica_environment(config, r)
    summary, _, table = coupled_excursion(env, CoinSource(config.seed, r), config.horizon)
    t0 = TIMEOUT if summary.t0 is None else summary.t0
    return [{"replica": r, "t0_or_timeout": t0, "k": row.k, "U_k": row.upcrossings,
             "V_k": row.v, "indicator": row.indicator, "violation": int(row.violation)}
            for row in table]


def _bpre_item(config, r):
    rng = np.random.default_rng([config.seed, r])
    return simulate_bpre(config.env, config.horizon, rng).csv_rows(r)


def _rde_draws(law, n, rng):
    alphas = 1.0 / np.array([rho(p) for p in draw_p_many(law, rng.random(n))])
    ms = draw_m_many(law, 1.0 - rng.random(n))
    return alphas, ms


def _rde_item(config, s):
    rng = np.random.default_rng([config.seed, s])
    law = config.env.packed()
    n = config.k_max
    x_path = simulate_rde(*_rde_draws(law, n, rng), n)
    w_path = simulate_rde(*_rde_draws(law, n, rng), n)
    return [{"sample": s, "x_n": x_path.x_values[-1], "w_n": w_path.w_value}]


def _hitprob_item(config, e):
    env = replica_environment(config, e)
    rows = []
    for z in HITPROB_Z:
        for k in range(1, config.k_max + 1):
            closed = hit_prob_closed(env, z, k)
            oracle = hit_prob_oracle(env, z, k)
            coin_seed = derive_seed(derive_seed(config.seed, e), z * (config.k_max + 1) + k)
            hits = hit_prob_monte_carlo(env, z, k, config.trials, coin_seed)
            est = hits / config.trials
            se = math.sqrt(closed * (1 - closed) / config.trials)
            score = (est - closed) / se if se > 0 else (0.0 if est == closed else math.inf)
            rows.append({"env": e, "z": z, "k": k, "closed": closed, "oracle": oracle,
                         "abs_diff": abs(closed - oracle), "mc_hits": hits,
                         "trials": config.trials, "mc_estimate": est, "std_err": se,
                         "z_score": score, "within_4se": int(abs(score) <= 4)})
    return rows


def _phase_spec(config, lam, beta):
    return dataclasses.replace(config.env, cookie_law=ExampleLaw(lam, beta))


def _phase_item(config, item):
    g, r = item
    lam, beta = _phase_grid(config)[g]
    env = replica_environment(config, r, _phase_spec(config, lam, beta))
    short = max(config.horizon // 10, 1)
    s = run_walk(0, env, CoinSource(config.seed, r), config.horizon,
                 checkpoints=(short, config.horizon))
    (pos_s, ret_s), (pos, ret) = s.checkpoints[short], s.checkpoints[config.horizon]
    return [{"lambda": lam, "beta": beta, "replica": r, "seed": derive_seed(config.seed, r),
             "h_short": short, "final_short": pos_s, "final": pos,
             "returns_short": ret_s, "returns": ret}]


def _phase_grid(config):
    return [(lam, beta) for lam in config.lambdas for beta in config.betas]


_ITEM = {"walk": _walk_item, "excursion": _walk_item, "couple": _couple_item,
         "bpre": _bpre_item, "rde": _rde_item, "hitprob": _hitprob_item,
         "phase": _phase_item}


def _work_items(config):
    if config.subcommand == "phase":
        return [(g, r) for g in range(len(_phase_grid(config)))
                for r in range(config.replicas)]
    return list(range(config.replicas))


def _run_chunk(config, items):
    fn = _ITEM[config.subcommand]
    return [fn(config, item) for item in items]


def _collect(config):
    items = _work_items(config)
    if config.workers == 1 or len(items) == 1:
        return _run_chunk(config, items)
    # contiguous chunks, a few per worker, merged back in item order
    n_chunks = min(len(items), 4 * config.workers)
    bounds = np.linspace(0, len(items), n_chunks + 1).astype(int)
    chunks = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = pool.map(_run_chunk, [config] * len(chunks), chunks)
        return [res for part in parts for res in part]


# --------------------------------------------------------------------------
# aggregates

def _proportion(successes, trials):
    lo, hi = binomial_interval(successes, trials)
    return {"estimate": successes / trials, "successes": successes, "trials": trials,
            "lower": lo, "upper": hi}


def _median(values):
    return float(np.median(np.asarray(values, dtype=float)))


def trend_label(median_short, median_long):
    """Direction of the median position between two horizons; no verdict implied."""
    if median_long > max(median_short, 0):
        return "drifting right"
    if median_long < min(median_short, 0):
        return "drifting left"
    return "no clear drift"


def _walk_aggregate(config, rows):
    n = len(rows)
    finals = [row["final"] for row in rows]
    returned = sum(row["t0"] != TIMEOUT for row in rows)
    return {"replicas": n, "mean_final": float(np.mean(finals)),
            "median_final": _median(finals), "mean_steps": float(np.mean([r["steps"] for r in rows])),
            "median_returns": _median([row["returns"] for row in rows]),
            "p_final_positive": _proportion(sum(f > 0 for f in finals), n),
            "p_hit_zero": _proportion(returned, n),
            "timeouts": n - returned if config.subcommand == "excursion" else None}


def _couple_aggregate(config, results):
    violations = sum(row["violation"] for rows in results for row in rows)
    bad_replicas = sum(any(row["violation"] for row in rows) for rows in results)
    timeouts = sum(rows[0]["t0_or_timeout"] == TIMEOUT for rows in results)
    return {"replicas": len(results), "violations": violations,
            "replicas_with_violations": bad_replicas, "timeouts": timeouts,
            "finished": len(results) - timeouts}


def _bpre_aggregate(config, results):
    n = len(results)
    firsts = [rows[0]["extinct_at"] for rows in results]
    hit = [f for f in firsts if f != ""]
    zeros = [sum(row["value"] == 0 for row in rows) for rows in results]
    finals = [rows[-1]["value"] for rows in results]
    return {"replicas": n, "generations": config.horizon,
            "p_hit_zero": _proportion(len(hit), n),
            "median_first_zero": _median(hit) if hit else None,
            "mean_zero_count": float(np.mean(zeros)),
            "median_log10_final": _median([math.log10(v + 1) for v in finals])}


def _rde_aggregate(config, rows):
    xs = [row["x_n"] for row in rows]
    ws = [row["w_n"] for row in rows]
    ks = two_sample_test(xs, ws, config.level)
    return {"samples": len(rows), "n": config.k_max, "ks_statistic": ks.statistic,
            "ks_critical": ks.critical, "level": config.level, "reject": ks.reject,
            "median_x": _median(xs), "median_w": _median(ws)}


def _hitprob_aggregate(config, rows):
    within = sum(row["within_4se"] for row in rows)
    return {"cases": len(rows), "max_abs_diff": max(row["abs_diff"] for row in rows),
            "within_4se": _proportion(within, len(rows))}


def predicted_label(spec, lam, beta):
    try:
        label = classify_regime_thm1(example_tail_descriptor(lam, beta), mean_log_rho(spec))
    except UnsupportedRegimeError:
        return "Unsupported"
    return str(label)


def _phase_aggregate(config, rows):
    grid = []
    for lam, beta in _phase_grid(config):
        sel = [row for row in rows if row["lambda"] == lam and row["beta"] == beta]
        n = len(sel)
        med_s = _median([row["final_short"] for row in sel])
        med = _median([row["final"] for row in sel])
        grew = sum(row["returns"] > row["returns_short"] for row in sel)
        grid.append({
            "lambda": lam, "beta": beta,
            "predicted": predicted_label(_phase_spec(config, lam, beta), lam, beta),
            "h_short": max(config.horizon // 10, 1), "horizon": config.horizon,
            "median_final_short": med_s, "median_final": med,
            "p_final_positive": _proportion(sum(row["final"] > 0 for row in sel), n),
            "median_returns_short": _median([row["returns_short"] for row in sel]),
            "median_returns": _median([row["returns"] for row in sel]),
            "p_returns_grew": _proportion(grew, n),
            "empirical_trend": trend_label(med_s, med),
        })
    return {"mean_log_rho": mean_log_rho(config.env), "grid": grid}


def run_experiment(config: ExperimentConfig) -> EnsembleReport:
    """Run the ensemble described by ``config`` and aggregate it."""
    results = _collect(config)
    rows = [row for part in results for row in part]
    sub = config.subcommand
    if sub in ("walk", "excursion"):
        aggregate = _walk_aggregate(config, rows)
    elif sub == "couple":
        aggregate = _couple_aggregate(config, results)
    elif sub == "bpre":
        aggregate = _bpre_aggregate(config, results)
    elif sub == "rde":
        aggregate = _rde_aggregate(config, rows)
    elif sub == "hitprob":
        aggregate = _hitprob_aggregate(config, rows)
    else:
        aggregate = _phase_aggregate(config, rows)
    return EnsembleReport(sub, config.to_mapping(), COLUMNS[sub], rows, aggregate)


# --------------------------------------------------------------------------
# output

def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


def render_report(report: EnsembleReport, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([_cell(row[c]) for c in report.columns])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(_json_safe(report.to_dict()), allow_nan=False) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_report(report: EnsembleReport, fmt: str, path) -> None:
    """Write the report; ``path`` of None or '-' means standard output."""
    text = render_report(report, fmt)
    if path is None or path == "-":
        import sys
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
