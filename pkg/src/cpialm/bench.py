"""Seeded benchmark harness comparing the APG-based and cutting-plane iALM.

For every ``m`` and trial ``t`` a QCQP is generated with seed
``base_seed + t`` and each requested solver runs a fixed number of outer
iterations on the same instance. Random subproblem starts are drawn from a
generator seeded by ``(base_seed + t, outer_iter)``, so both solvers see the
same draws.

Three files are written:

* the per-iteration table (``BENCH_COLUMNS``), one row per
  ``(m, trial, solver, outer_iter)``;
* a per-group summary (``SUMMARY_COLUMNS``), one row per ``(m, solver)``;
* a markdown rendering with one table per ``(m, trial)``.

``format`` picks which of the row table or markdown goes to
``output_path``; the other files are written next to it.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ialm import IalmConfig, IalmTrace, ialm_solve_apg, ialm_solve_cutting_plane
from .qcqp import GeneratorConfig, generate, to_problem

THREADS_ENV = "CPIALM_THREADS"
SOLVERS = ("apg", "cut")
BENCH_COLUMNS = ("m", "trial", "solver", "outer_iter", "beta", "grad_evals", "func_evals",
                 "pres", "dres", "compl", "time_sec", "status")
SUMMARY_COLUMNS = ("m", "solver", "trials", "failures", "total_grad_evals", "total_time_sec",
                   "max_final_pres", "max_final_dres", "max_final_compl", "all_eps_kkt")
STATUS_OK = "ok"


@dataclass(frozen=True)
class BenchConfig:
    """Benchmark parameters.

    Parameters
    ----------
    n : int
        Problem dimension.
    m_list : sequence of int
        Numbers of constraints, one group per entry.
    trials : int
        Instances per group; trial ``t`` uses seed ``base_seed + t``.
    eps : float
        Target KKT accuracy.
    beta0, sigma : float
        Penalty schedule ``beta_k = beta0 * sigma**k``.
    solver_set : tuple of {"apg", "cut"}
    init_mode : {"random", "warm"}
    output_path : path-like
    format : {"csv", "markdown"}
    max_outer : int
        Outer iterations per run.
    stop_at_kkt : bool
        Stop a run early once it is eps-KKT. Off by default so every run
        has ``max_outer`` rows.
    generator : dict
        Extra keyword arguments for :class:`GeneratorConfig`.
    """

    n: int = 200
    m_list: Tuple[int, ...] = (1,)
    trials: int = 3
    base_seed: int = 0
    eps: float = 1e-4
    beta0: float = 1.0
    sigma: float = 10.0
    solver_set: Tuple[str, ...] = SOLVERS
    init_mode: str = "random"
    output_path: Optional[str] = "bench.csv"
    format: str = "csv"
    max_outer: int = 5
    stop_at_kkt: bool = False
    generator: Dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "m_list", tuple(int(m) for m in self.m_list))
        object.__setattr__(self, "solver_set", tuple(self.solver_set))
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ValueError("m_list must be a nonempty list of positive integers")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.solver_set or any(s not in SOLVERS for s in self.solver_set):
            raise ValueError(f"solver_set must be a nonempty subset of {SOLVERS}")
        if self.format not in ("csv", "markdown"):
            raise ValueError("format must be 'csv' or 'markdown'")
        if self.init_mode not in ("random", "warm"):
            raise ValueError("init_mode must be 'random' or 'warm'")
        IalmConfig(beta0=self.beta0, sigma=self.sigma, eps=self.eps, max_outer=self.max_outer)


@dataclass(frozen=True)
class RunResult:
    """One solver on one instance."""

    m: int
    trial: int
    solver: str
    trace: Optional[IalmTrace]
    status: str
    seconds: float

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass
class BenchReport:
    runs: List[RunResult]
    paths: Dict[str, Path]

    @property
    def failures(self) -> List[RunResult]:
        return [r for r in self.runs if not r.ok]

    def group(self, m: int, solver: str) -> List[RunResult]:
        return [r for r in self.runs if r.m == m and r.solver == solver]


def thread_count() -> int:
    """Worker threads from ``CPIALM_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise ValueError(f"{THREADS_ENV} must be positive")
    return k


def trial_seed(cfg: BenchConfig, trial: int) -> int:
    return cfg.base_seed + trial


def _ialm_config(cfg: BenchConfig, trial: int) -> IalmConfig:
    return IalmConfig(beta0=cfg.beta0, sigma=cfg.sigma, eps=cfg.eps, max_outer=cfg.max_outer,
                      init_mode=cfg.init_mode, stop_at_kkt=cfg.stop_at_kkt,
                      seed=trial_seed(cfg, trial))


def run_trial(cfg: BenchConfig, m: int, trial: int) -> List[RunResult]:
    """Run every requested solver on instance ``(m, trial)``."""
    out = []
    try:
        gen = GeneratorConfig(n=cfg.n, m=m, seed=trial_seed(cfg, trial), **cfg.generator)
        problem = to_problem(generate(gen))
    except Exception as exc:  # instance failures are reported per solver
        return [RunResult(m, trial, s, None, f"error: {exc}", 0.0) for s in cfg.solver_set]
    icfg = _ialm_config(cfg, trial)
    for s in SOLVERS:
        if s not in cfg.solver_set:
            continue
        solve = ialm_solve_apg if s == "apg" else ialm_solve_cutting_plane
        t0 = time.perf_counter()
        try:
            _, trace = solve(problem, icfg)
            status = STATUS_OK
        except Exception as exc:
            trace, status = None, f"error: {type(exc).__name__}: {exc}"
        out.append(RunResult(m, trial, s, trace, status, time.perf_counter() - t0))
    return out


def _fmt(v: float) -> str:
    return f"{v:.6e}"


def bench_rows(runs: Sequence[RunResult]):
    """Rows of the per-iteration table in ``BENCH_COLUMNS`` order."""
    for r in runs:
        if r.trace is None:
            yield (r.m, r.trial, r.solver, "", "", "", "", "", "", "", _fmt(r.seconds), r.status)
            continue
        for rec in r.trace.records:
            yield (r.m, r.trial, r.solver, rec.outer_iter, _fmt(rec.beta), rec.grad_evals,
                   rec.func_evals, _fmt(rec.pres), _fmt(rec.dres), _fmt(rec.compl),
                   _fmt(rec.time_sec), r.status)


def summary_rows(runs: Sequence[RunResult], eps: float):
    keys = sorted({(r.m, SOLVERS.index(r.solver)) for r in runs})
    for m, si in keys:
        group = [r for r in runs if r.m == m and r.solver == SOLVERS[si]]
        done = [r for r in group if r.ok and r.trace.records]
        finals = [r.trace.records[-1] for r in done]

        def worst(name):
            return _fmt(max(getattr(f, name) for f in finals)) if finals else ""

        kkt = bool(finals) and len(finals) == len(group) and all(
            max(f.pres, f.dres, f.compl) <= eps for f in finals)
        yield (m, SOLVERS[si], len(group), len(group) - len(done),
               sum(int(r.trace.column("grad_evals").sum()) for r in done),
               _fmt(sum(r.seconds for r in group)), worst("pres"), worst("dres"),
               worst("compl"), kkt)


def render_markdown(runs: Sequence[RunResult], cfg: BenchConfig) -> str:
    """One table per ``(m, trial)`` with the solvers side by side."""
    lines = [f"# Benchmark n={cfg.n}, eps={cfg.eps:g}, beta0={cfg.beta0:g}, "
             f"sigma={cfg.sigma:g}, init={cfg.init_mode}", ""]
    solvers = [s for s in SOLVERS if s in cfg.solver_set]
    for m in cfg.m_list:
        for t in range(cfg.trials):
            by_solver = {r.solver: r for r in runs if r.m == m and r.trial == t}
            lines.append(f"## m = {m}, trial {t + 1}")
            lines.append("")
            head = ["iter", "beta"]
            for s in solvers:
                head += [f"{s} #grad", f"{s} #func", f"{s} pres", f"{s} dres",
                         f"{s} compl", f"{s} time"]
            lines.append("| " + " | ".join(head) + " |")
            lines.append("|" + "---|" * len(head))
            depth = max((len(r.trace) for r in by_solver.values() if r.trace), default=0)
            for k in range(depth):
                beta = cfg.beta0 * cfg.sigma ** k
                cells = [str(k + 1), f"{beta:g}"]
                for s in solvers:
                    r = by_solver.get(s)
                    if r is None or r.trace is None or k >= len(r.trace):
                        cells += ["-"] * 6
                        continue
                    rec = r.trace.records[k]
                    cells += [str(rec.grad_evals), str(rec.func_evals), f"{rec.pres:.2e}",
                              f"{rec.dres:.2e}", f"{rec.compl:.2e}", f"{rec.time_sec:.2f}"]
                lines.append("| " + " | ".join(cells) + " |")
            for s in solvers:
                r = by_solver.get(s)
                if r is not None and not r.ok:
                    lines.append(f"\n{s} failed: {r.status}")
            lines.append("")
    return "\n".join(lines)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def output_paths(cfg: BenchConfig) -> Dict[str, Path]:
    """Where the table, summary and markdown files go."""
    base = Path(cfg.output_path)
    stem = base.with_suffix("")
    if cfg.format == "csv":
        return {"table": base, "summary": Path(f"{stem}.summary.csv"),
                "markdown": Path(f"{stem}.md")}
    table = Path(f"{stem}.csv")
    if table == base:
        table = Path(f"{stem}.rows.csv")
    return {"markdown": base, "table": table, "summary": Path(f"{stem}.summary.csv")}


def run_benchmark(cfg: BenchConfig, write: bool = True) -> BenchReport:
    """Run all groups and write the report files.

    Raises
    ------
    OSError
        When the output directory does not exist or is not writable; this
        is checked before any solver runs.
    """
    paths = output_paths(cfg) if write and cfg.output_path is not None else {}
    for p in paths.values():
        if not p.parent.is_dir() or not os.access(p.parent, os.W_OK):
            raise OSError(f"output directory {p.parent} is not writable")
    jobs = [(m, t) for m in cfg.m_list for t in range(cfg.trials)]
    workers = min(thread_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: run_trial(cfg, *j), jobs))
    else:
        results = [run_trial(cfg, *j) for j in jobs]
    # job order is (m, trial) and solvers run in SOLVERS order within a job
    runs = [r for group in results for r in group]
    if paths:
        _write_csv(paths["table"], BENCH_COLUMNS, bench_rows(runs))
        _write_csv(paths["summary"], SUMMARY_COLUMNS, summary_rows(runs, cfg.eps))
        paths["markdown"].write_text(render_markdown(runs, cfg) + "\n")
    return BenchReport(runs, paths)


def grad_ratios(trace: IalmTrace) -> np.ndarray:
    """Ratios of gradient counts between consecutive outer iterations."""
    g = trace.column("grad_evals").astype(float)
    return g[1:] / g[:-1]


def spread(values) -> float:
    """``max / min`` of positive values; ``inf`` when a value is zero."""
    v = np.asarray(values, dtype=float)
    lo = float(v.min())
    return math.inf if lo <= 0 else float(v.max()) / lo
