"""Experiment orchestration: sweeps, multi-seed aggregation, persistence and
the acceptance registry.

A sweep runs every (cell x seed) pair described by an :class:`ExperimentConfig`
and writes one CSV per cell plus a JSON manifest.  Results depend only on
the config document; ``threads`` only changes how jobs are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .algorithms import (AlgorithmConfig, RUNNERS, run_local_sgda, run_momentum_local_sgda,
                         run_local_sgda_plus, spread)
from .core import ConfigError, StepSchedule, SyncSchedule, schedule_from_theorem
from .metrics import moreau_envelope, moreau_grad, moreau_prox, time_mean, trace_metrics
from .oracles import centralized_sgda_reference, finite_diff_grad, fit_rate
from .problems import HeterogeneityProfile, load_problem, make_quadratic, validate_assumptions

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("kind", "seed", "step", "t", "grad_phi_sq", "moreau_grad_sq", "phi_gap",
               "delta_x", "delta_y", "comm_rounds_so_far")
METRICS = ("grad_phi_sq", "moreau_grad_sq", "phi_gap", "delta_x", "delta_y")
REDUCERS = ("mean", "min_over_t", "final")
SWEEP_AXES = ("algorithm", "n", "tau", "T", "sigma")
THEOREM_FOR = {"local_sgda": "T1", "momentum_local_sgda": "T2",
               "local_sgda_plus": "T3", "momentum_local_sgda_plus": "T3"}
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """One experiment document.

    ``problem`` is either ``{"path": "problem.json"}`` or
    ``{"generator": {...}, "seed": s}`` with generator keys ``class_tag``,
    ``d1``, ``d2``, ``mu``, ``kappa``, ``varsigma_x``, ``varsigma_y``, ``mode``,
    ``y_constraint``, ``radius``.  ``schedule`` is ``{"source": "theorem"}``
    (optionally with ``"theorem": "T1"``) or ``{"source": "explicit", "eta_x":
    ..., "eta_y": ..., "alpha": ..., "beta_x": ..., "beta_y": ...}``.
    ``tau`` may be ``"theorem"``; ``S`` may be ``"tau^2"``.
    """

    problem: dict
    algorithm: str = "local_sgda"
    schedule: dict = field(default_factory=lambda: {"source": "theorem"})
    n: int = 4
    sigma: float = 0.0
    T: int = 1000
    tau: object = "theorem"
    S: object = None
    seeds: list = field(default_factory=lambda: [0])
    sweep: dict = field(default_factory=dict)
    metric_stride: int = 1
    momentum_sync: str = "average"
    shared_noise: bool = False
    moreau: Optional[bool] = None
    burn_in: float = 0.25
    output_dir: str = "runs"
    name: str = "experiment"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any((not isinstance(s, int)) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        unknown = set(self.sweep) - set(SWEEP_AXES)
        if unknown:
            raise ConfigError(f"unknown sweep axes {sorted(unknown)}; allowed {SWEEP_AXES}")
        for k, v in self.sweep.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep axis {k!r} must be a non-empty list")
        if self.metric_stride < 1:
            raise ConfigError("metric_stride must be >= 1")
        if "path" not in self.problem and "generator" not in self.problem:
            raise ConfigError("problem needs a 'path' or a 'generator' entry")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (key order does not matter)."""
        return config_hash(self.to_dict())

    def cells(self) -> list:
        axes = [a for a in SWEEP_AXES if a in self.sweep]
        out = []
        for values in itertools.product(*(self.sweep[a] for a in axes)):
            params = {"algorithm": self.algorithm, "n": self.n, "tau": self.tau, "T": self.T,
                      "sigma": self.sigma}
            params.update(dict(zip(axes, values)))
            out.append(params)
        return out


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# per-cell setup


def build_problem(config: ExperimentConfig, n: int, sigma: float):
    src = config.problem
    if "path" in src:
        doc = json.loads(Path(src["path"]).read_text())
        p = load_problem(doc)
        if p.n != n or p.sigma != sigma:
            raise ConfigError("n and sigma are fixed by the problem file; do not sweep them")
        return p
    g = dict(src["generator"])
    het = HeterogeneityProfile(g.pop("varsigma_x", 0.0), g.pop("varsigma_y", 0.0),
                               g.pop("mode", "offset"))
    tag = g.pop("class_tag", "NC_SC")
    d1, d2 = g.pop("d1", 10), g.pop("d2", 10)
    allowed = {"mu", "kappa", "y_constraint", "radius", "x0_scale"}
    if set(g) - allowed:
        raise ConfigError(f"unknown generator keys {sorted(set(g) - allowed)}")
    return make_quadratic(n, d1, d2, tag, het, sigma, seed=src.get("seed", 0), **g)


def build_schedules(config: ExperimentConfig, cell: dict, problem):
    algo = cell["algorithm"]
    if algo not in THEOREM_FOR:
        raise ConfigError(f"unknown minimax algorithm {algo!r}; choose from {sorted(THEOREM_FOR)}")
    T, tau = int(cell["T"]), cell["tau"]
    sched = dict(config.schedule)
    source = sched.pop("source", "theorem")
    S = config.S
    if source == "theorem":
        thm = sched.pop("theorem", None) or THEOREM_FOR[algo]
        kappa = problem.kappa if problem.kappa is not None else 1.0
        step, sync = schedule_from_theorem(thm, problem.n, T, problem.lipschitz, kappa)
        if tau != "theorem":
            tau = int(tau)
            sync = SyncSchedule(tau, T, None)
        if sync.s_interval is not None and S is None:
            S = sync.s_interval
        tau = sync.tau
    elif source == "explicit":
        step = StepSchedule(**sched)
        if tau == "theorem":
            raise ConfigError("explicit schedules need an integer tau")
        tau = int(tau)
    else:
        raise ConfigError(f"unknown schedule source {source!r}")
    if S == "tau^2":
        S = tau * tau
    if algo in ("local_sgda_plus", "momentum_local_sgda_plus"):
        if S is None:
            raise ConfigError(f"{algo} needs a snapshot interval S")
    else:
        S = None
    sync = SyncSchedule(tau, T, None if S is None else int(S))
    return step, sync


# ---------------------------------------------------------------------------
# jobs


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if not math.isfinite(v):
        return repr(v)
    return repr(v)


def _final_metrics(problem, trace, metrics, moreau):
    out = {}
    xf, yf = trace.x_final[None], trace.y_final[None]
    have = metrics["grad_phi_sq"] is not None
    if have:
        phi, g = problem.envelope_batch(xf)
        out["grad_phi_sq"] = float(g[0] @ g[0])
        out["phi_gap"] = max(0.0, float(phi[0] - problem.mean_value(xf, yf)[0]))
    if metrics["moreau_grad_sq"] is not None:
        mg = moreau_grad(problem, trace.x_final)
        out["moreau_grad_sq"] = float(mg @ mg)
    P = np.concatenate([trace.clients.x, trace.clients.y], axis=1)
    dx, dy = spread(P, problem.d1)
    out["delta_x"], out["delta_y"] = float(dx), float(dy)
    return out


def run_cell_seed(config_doc: dict, cell: dict, seed: int) -> dict:
    """Run one (cell, seed) job; returns CSV rows and per-metric reductions."""
    config = ExperimentConfig.from_dict(config_doc)
    problem = build_problem(config, int(cell["n"]), float(cell["sigma"]))
    step, sync = build_schedules(config, cell, problem)
    acfg = AlgorithmConfig(step, sync, seed=seed, metric_stride=config.metric_stride,
                           momentum_sync=config.momentum_sync, shared_noise=config.shared_noise)
    trace = RUNNERS[cell["algorithm"]](problem, acfg)
    m = trace_metrics(problem, trace, moreau=config.moreau)
    rows = []
    cols = {c: m[c] for c in METRICS}
    for k, t in enumerate(m["t"]):
        rows.append(["metric", str(seed), str(k), str(int(t))]
                    + [_fmt(None if cols[c] is None else cols[c][k]) for c in METRICS]
                    + [str(int(m["comm_rounds_so_far"][k]))])
    final = _final_metrics(problem, trace, m, config.moreau)
    stats = {}
    for c in METRICS:
        if cols[c] is None:
            continue
        stats[c] = {"mean": time_mean(cols[c]), "min_over_t": float(np.min(cols[c])),
                    "final": final.get(c)}
    summary = ["summary", str(seed), "", str(sync.horizon_T)] + \
        [_fmt(stats[c]["mean"]) if c in stats else "" for c in METRICS] + [str(trace.comm_rounds)]
    rows.append(summary)
    return {"rows": rows, "stats": stats, "tau": sync.tau, "T": sync.horizon_T,
            "S": sync.s_interval, "comm_rounds": trace.comm_rounds,
            "step": asdict(step), "output_index": trace.output_index}


def _job(args):
    return run_cell_seed(*args)


def _csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(CSV_COLUMNS)
    w.writerows(rows)
    return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    output_dir: str
    cells: list
    wall_clock: float = 0.0
    overrides: dict = field(default_factory=dict)
    burn_in: float = 0.25

    @property
    def skipped(self) -> list:
        return [c for c in self.cells if c["status"] == "skipped"]

    @property
    def csv_paths(self) -> list:
        return [Path(self.output_dir) / c["path"] for c in self.cells if c["status"] == "run"]

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path=None) -> Path:
        path = Path(path) if path else Path(self.output_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        doc = json.loads(path.read_text())
        m = cls(**{f.name: doc[f.name] for f in fields(cls) if f.name in doc})
        if not Path(m.output_dir).is_absolute():
            m.output_dir = str(path.parent)
        return m


def run_sweep(config: ExperimentConfig, threads: int = 1, output_dir=None,
              overrides: Optional[dict] = None) -> RunManifest:
    """Execute every (cell x seed); invalid cells are recorded as skipped."""
    t0 = time.perf_counter()
    out = Path(output_dir or config.output_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    doc = config.to_dict()
    cells = config.cells()
    entries = []
    jobs = []
    for idx, cell in enumerate(cells):
        entry = {"index": idx, "params": cell, "status": "run", "reason": None,
                 "path": f"cells/cell_{idx:03d}.csv", "seeds": list(config.seeds)}
        try:
            problem = build_problem(config, int(cell["n"]), float(cell["sigma"]))
            step, sync = build_schedules(config, cell, problem)
            entry.update(tau=sync.tau, T=sync.horizon_T, S=sync.s_interval,
                         comm_rounds=sync.rounds, step=asdict(step))
            jobs.extend((idx, (doc, cell, s)) for s in config.seeds)
        except (ConfigError, ValueError) as exc:
            entry.update(status="skipped", reason=str(exc), path=None)
        entries.append(entry)

    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, [j[1] for j in jobs]))
    else:
        results = [_job(j[1]) for j in jobs]

    by_cell = {}
    for (idx, args), res in zip(jobs, results):
        by_cell.setdefault(idx, []).append((args[2], res))
    for idx, items in by_cell.items():
        rows = [r for _, res in items for r in res["rows"]]
        (out / entries[idx]["path"]).write_bytes(_csv_bytes(rows))
        entries[idx]["stats"] = {str(seed): res["stats"] for seed, res in items}
        entries[idx]["output_index"] = {str(seed): res["output_index"] for seed, res in items}
    manifest = RunManifest(config_hash=config.config_hash(), artifact_version=__version__,
                           output_dir=str(out), cells=entries,
                           wall_clock=time.perf_counter() - t0, overrides=dict(overrides or {}),
                           burn_in=config.burn_in)
    manifest.save()
    return manifest


def aggregate(manifest, metric: str, reducer: str = "mean") -> list:
    """Per-cell seed mean and standard error of ``reducer(metric)``."""
    if isinstance(manifest, (str, Path)):
        manifest = RunManifest.load(manifest)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    if reducer not in REDUCERS:
        raise ValueError(f"unknown reducer {reducer!r}; choose from {REDUCERS}")
    table = []
    for c in manifest.cells:
        if c["status"] != "run":
            continue
        vals = []
        for seed in c["seeds"]:
            st = c.get("stats", {}).get(str(seed), {})
            if metric not in st or st[metric].get(reducer) is None:
                raise ValueError(f"metric {metric!r} is not available in cell {c['index']}")
            vals.append(st[metric][reducer])
        vals = np.asarray(vals, dtype=float)
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        table.append({"cell": c["index"], "params": c["params"], "tau": c.get("tau"),
                      "T": c.get("T"), "mean": float(vals.mean()), "stderr": se,
                      "seeds": int(vals.size)})
    return table


def _axis_value(row, axis):
    if axis == "tau-1":
        return row["tau"] - 1
    if axis in ("tau", "T"):
        return row[axis]
    return row["params"][axis]


def fit_axis(manifest, axis: str, metric: str, reducer: str = "mean",
             burn_in: Optional[float] = None):
    """Fit the log-log slope of the aggregated metric against a sweep axis.

    ``axis`` is a sweep axis name or ``"tau-1"``.
    """
    if isinstance(manifest, (str, Path)):
        manifest = RunManifest.load(manifest)
    table = aggregate(manifest, metric, reducer)
    xs = [float(_axis_value(r, axis)) for r in table]
    ys = [r["mean"] for r in table]
    b = manifest.burn_in if burn_in is None else burn_in
    return fit_rate(xs, ys, burn_in=b)


# ---------------------------------------------------------------------------
# acceptance


@dataclass
class AcceptanceReport:
    suite_id: str
    criterion: int
    passed: bool
    measured: dict
    tolerance: str
    details: str = ""
    runtime: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{status}] {self.criterion:2d} {self.suite_id}: {vals} (band: {self.tolerance})"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _base_generator(tag="NC_SC", **kw):
    g = {"class_tag": tag, "d1": 10, "d2": 10, "mu": 0.25, "kappa": 4.0}
    g.update(kw)
    return g


def criterion2_config(seeds=20) -> ExperimentConfig:
    return ExperimentConfig(
        name="theorem1-rate", problem={"generator": _base_generator(), "seed": 0},
        algorithm="local_sgda", n=8, sigma=0.5, seeds=list(range(seeds)), metric_stride=10,
        sweep={"T": [2000, 4000, 8000, 16000, 32000, 64000]})


def criterion3_config(seeds=30) -> ExperimentConfig:
    return ExperimentConfig(
        name="linear-speedup", problem={"generator": _base_generator(), "seed": 0},
        algorithm="local_sgda", T=20000, sigma=0.5, seeds=list(range(seeds)), metric_stride=10,
        sweep={"n": [4, 16]})


def criterion4_config(seeds=10) -> ExperimentConfig:
    return ExperimentConfig(
        name="sync-error-law",
        problem={"generator": _base_generator(varsigma_x=0.5, varsigma_y=0.5, mode="offset"),
                 "seed": 0},
        algorithm="local_sgda", n=8, sigma=0.5, T=4096, seeds=list(range(seeds)),
        schedule={"source": "explicit", "eta_x": 1e-3, "eta_y": 1e-3},
        sweep={"tau": [2, 4, 8, 16]})


def criterion9_config(seeds=20) -> ExperimentConfig:
    return ExperimentConfig(
        name="momentum-parity", problem={"generator": _base_generator("NC_PL"), "seed": 0},
        n=8, sigma=0.5, T=32000, seeds=list(range(seeds)), metric_stride=10,
        sweep={"algorithm": ["local_sgda", "momentum_local_sgda"]})


def _workdir(out_dir, name):
    base = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="fedminimax-"))
    d = base / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _acc_tau1(out_dir=None, threads=1):
    p = make_quadratic(2, 3, 3, "NC_SC", HeterogeneityProfile(0.2, 0.2), 0.2, seed=0)
    cfg = AlgorithmConfig(StepSchedule(0.02, 0.1), SyncSchedule(1, 500), seed=0)
    a = run_local_sgda(p, cfg)
    b = centralized_sgda_reference(p, cfg)
    dev = max(float(np.max(np.abs(a.x - b.x))), float(np.max(np.abs(a.y - b.y))),
              float(np.max(np.abs(a.x_final - b.x_final))))
    same = (np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
            and np.array_equal(a.x_final, b.x_final) and np.array_equal(a.y_final, b.y_final))
    return same, {"max_abs_deviation": dev}, "exact equality"


def _acc_rate(out_dir=None, threads=1):
    m = run_sweep(criterion2_config(), threads, _workdir(out_dir, "theorem1-rate"))
    fit = fit_axis(m, "T", "grad_phi_sq", "mean")
    return -0.65 <= fit.slope <= -0.35, {"slope": fit.slope, "r_squared": fit.r_squared}, \
        "slope in [-0.65, -0.35]"


def _acc_speedup(out_dir=None, threads=1):
    m = run_sweep(criterion3_config(), threads, _workdir(out_dir, "linear-speedup"))
    tab = {r["params"]["n"]: r["mean"] for r in aggregate(m, "grad_phi_sq", "mean")}
    ratio = tab[16] / tab[4]
    return 0.35 <= ratio <= 0.70, {"ratio": ratio, "err_n4": tab[4], "err_n16": tab[16]}, \
        "ratio in [0.35, 0.70]"


def _acc_sync(out_dir=None, threads=1):
    m = run_sweep(criterion4_config(), threads, _workdir(out_dir, "sync-error-law"))
    tx = aggregate(m, "delta_x", "mean")
    ty = aggregate(m, "delta_y", "mean")
    xs = [r["tau"] - 1 for r in tx]
    ys = [a["mean"] + b["mean"] for a, b in zip(tx, ty)]
    fit = fit_rate(xs, ys, burn_in=m.burn_in)
    return 1.6 <= fit.slope <= 2.4, {"slope": fit.slope, "r_squared": fit.r_squared}, \
        "slope vs (tau-1) in [1.6, 2.4]"


def _acc_moreau(out_dir=None, threads=1):
    worst, exact = 0.0, True
    for s in range(20):
        p = make_quadratic(4, 5, 5, "NC_C", HeterogeneityProfile(0.3, 0.3), 0.0, seed=s)
        x = np.random.default_rng(1000 + s).standard_normal(p.d1)
        g = moreau_grad(p, x)
        x_hat = moreau_prox(p, x).x_hat
        exact &= bool(np.array_equal(g, 2.0 * p.lipschitz * (x - x_hat)))
        fd = finite_diff_grad(lambda z: moreau_envelope(p, z), x, h=1e-5)
        worst = max(worst, float(np.linalg.norm(fd - g) / np.linalg.norm(g)))
    return worst <= 1e-3 and exact, {"max_rel_error": worst, "identity_exact": exact}, \
        "rel. error <= 1e-3 and exact 2L(x - x_hat) identity"


def _acc_pl(out_dir=None, threads=1):
    worst_pl, worst_qg = math.inf, math.inf
    for s, (n, d1, d2) in enumerate([(4, 5, 5), (8, 10, 10), (2, 3, 8), (6, 7, 4), (1, 4, 6)]):
        p = make_quadratic(n, d1, d2, "NC_PL",
                           HeterogeneityProfile(0.5 if n > 1 else 0.0, 0.5 if n > 1 else 0.0),
                           0.1, seed=s)
        r = validate_assumptions(p, sample_count=1000, seed=s)
        worst_pl = min(worst_pl, r.pl_min_slack)
        worst_qg = min(worst_qg, r.qg_min_slack)
    ok = worst_pl >= -1e-8 and worst_qg >= -1e-8
    return ok, {"min_pl_slack": worst_pl, "min_qg_slack": worst_qg}, "slack >= -1e-8"


class _SnapshotProbe:
    """Delegating problem that logs the x-argument of every y-gradient call."""

    def __init__(self, problem):
        self._p = problem
        self.calls = []

    def __getattr__(self, name):
        return getattr(self._p, name)

    def grad_y(self, X, Y):
        self.calls.append(np.array(X, copy=True))
        return self._p.grad_y(X, Y)


def _acc_snapshot(out_dir=None, threads=1):
    base = make_quadratic(3, 4, 4, "NC_SC", HeterogeneityProfile(0.3, 0.3), 0.3, seed=0)
    probe = _SnapshotProbe(base)
    tau, T = 4, 96
    S = 3 * tau
    trace = run_local_sgda_plus(probe, AlgorithmConfig(StepSchedule(0.02, 0.05),
                                                       SyncSchedule(tau, T, S), seed=0))
    args = probe.calls
    changes = [t for t in range(1, T) if not np.array_equal(args[t], args[t - 1])]
    rows_equal = all(np.array_equal(a, np.broadcast_to(a[0], a.shape)) for a in args)
    expected = [t for t in range(1, T) if t % S == 0]
    ok = len(args) == T and rows_equal and changes == expected \
        and trace.snapshot_steps == [0] + list(range(S, T + 1, S))
    return ok, {"change_steps": changes}, f"x-argument changes only at t = 0 mod {S}"


def _acc_momentum(out_dir=None, threads=1):
    from .problems import QuadraticProblem
    n, d1, d2 = 3, 3, 2
    c = np.array([[0.3, -1.2, 0.7]] * n)
    dd = np.array([[0.5, -0.25]] * n)
    lin = QuadraticProblem(np.zeros((n, d1, d1)), np.zeros((n, d1, d2)), np.zeros((n, d2, d2)),
                           c, dd, sigma=0.0)
    cfg = AlgorithmConfig(StepSchedule(0.1, 0.1, alpha=0.2, beta_x=3.0, beta_y=3.0),
                          SyncSchedule(4, 40), seed=0)
    tr = run_momentum_local_sgda(lin, cfg)
    fixed = bool(np.all(tr.clients.d_x == c) and np.all(tr.clients.d_y == dd))
    # mixing identity against an independent replay of the gradients (n = 1)
    p = make_quadratic(1, 3, 3, "NC_SC", HeterogeneityProfile(), 0.4, seed=1)
    alpha, beta = 0.3, 2.0
    cfg = AlgorithmConfig(StepSchedule(0.05, 0.1, alpha=alpha, beta_x=beta, beta_y=beta),
                          SyncSchedule(1, 50), seed=2)
    tr = run_momentum_local_sgda(p, cfg)
    from .core import RngStream, draw_gaussian
    stream = RngStream(2, client=0, purpose="grad")
    stream.advance(p.d1 + p.d2)   # initial direction sample
    worst = 0.0
    for t in range(tr.T - 1):
        gx, gy = p.client_grad(0, tr.x[t + 1], tr.y[t + 1])
        gx = gx + draw_gaussian(stream, p.d1, p.sigma)
        gy = gy + draw_gaussian(stream, p.d2, p.sigma)
        pred = np.concatenate([(1 - beta * alpha) * tr.dir_x[t] + beta * alpha * gx,
                               (1 - beta * alpha) * tr.dir_y[t] + beta * alpha * gy])
        got = np.concatenate([tr.dir_x[t + 1], tr.dir_y[t + 1]])
        scale = np.maximum(1.0, np.abs(pred))
        worst = max(worst, float(np.max(np.abs(got - pred) / scale)))
    ok = fixed and worst <= 1e-12
    return ok, {"fixed_point_exact": fixed, "max_mixing_residual": worst}, \
        "fixed point exact; mixing residual <= 1e-12"


def _acc_parity(out_dir=None, threads=1):
    m = run_sweep(criterion9_config(), threads, _workdir(out_dir, "momentum-parity"))
    tab = {r["params"]["algorithm"]: r["mean"] for r in aggregate(m, "grad_phi_sq", "mean")}
    ratio = tab["momentum_local_sgda"] / tab["local_sgda"]
    return 0.5 <= ratio <= 2.0, {"ratio": ratio, **tab}, "ratio in [0.5, 2]"


def _acc_determinism(out_dir=None, threads=1):
    cfg = criterion4_config(seeds=4)
    digests = []
    for k, th in enumerate((1, 1, max(2, threads))):
        m = run_sweep(cfg, th, _workdir(out_dir, f"determinism/run{k}_threads{th}"))
        digests.append([hashlib.sha256(p.read_bytes()).hexdigest() for p in m.csv_paths])
    ok = digests[0] == digests[1] == digests[2]
    return ok, {"csv_files": len(digests[0]), "identical": ok}, "byte-identical CSVs"


SUITES = {
    "tau1-equivalence": (1, _acc_tau1),
    "theorem1-rate": (2, _acc_rate),
    "linear-speedup": (3, _acc_speedup),
    "sync-error-law": (4, _acc_sync),
    "moreau-correctness": (5, _acc_moreau),
    "pl-growth": (6, _acc_pl),
    "snapshot-semantics": (7, _acc_snapshot),
    "momentum-mixing": (8, _acc_momentum),
    "momentum-parity": (9, _acc_parity),
    "determinism": (10, _acc_determinism),
}


def list_suites() -> list:
    return list(SUITES)


def acceptance_suite(suite_id: str, out_dir=None, threads: int = 1) -> AcceptanceReport:
    """Run one registered criterion and report measured values against its band."""
    if suite_id not in SUITES:
        raise KeyError(f"unknown suite {suite_id!r}; known: {', '.join(SUITES)}")
    num, fn = SUITES[suite_id]
    t0 = time.perf_counter()
    try:
        ok, measured, band = fn(out_dir=out_dir, threads=threads)
        details = ""
    except Exception as exc:  # failures are report entries, not crashes
        logger.exception("suite %s raised", suite_id)
        ok, measured, band, details = False, {}, "", f"{type(exc).__name__}: {exc}"
    return AcceptanceReport(suite_id, num, bool(ok), measured, band, details,
                            time.perf_counter() - t0)
