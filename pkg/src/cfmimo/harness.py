"""Seeded Monte-Carlo experiments and CSV emission.

One trial runs the full pipeline: drop positions, draw correlated
shadowing and small-scale fading, estimate channels from uplink pilots (or
bypass estimation under perfect CSI), build serving clusters and link
gains, evaluate the uniform-power baseline, then run the requested power
optimizer.  Every random stage draws from its own seed stream derived from
(trial_seed, stage index, attempt), so results are independent of
evaluation order and two runs with the same seeds are bit-identical;
channel realizations in particular do not depend on mode/csi/objective,
which makes CF-vs-UC comparisons at equal seeds paired by construction.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel, geometry, training
from .config import SystemConfig
from .errors import ConfigurationError, SingularChannelError
from .linkmodel import PowerMatrix, RateReport, all_user_rates, build_link_gains
from .slbm import OptTrace, RateContext, optimize_maxmin, optimize_sumrate

__all__ = [
    "TrialResult",
    "ExperimentResult",
    "derive_trial_seed",
    "run_trial",
    "run_experiment",
    "emit_sumrate_curve",
    "emit_rate_cdf",
    "run_meta",
]

OBJECTIVES = ("sumrate", "maxmin")

# stage indices of the per-trial seed streams
_STAGE_DROP, _STAGE_SHADOW, _STAGE_SMALL, _STAGE_PILOT, _STAGE_NOISE = range(5)

_MAX_REDRAWS = 3


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one Monte-Carlo trial."""

    seed: int
    mode: str
    csi: str
    p_max_w: float
    objective: str
    rates_uniform: RateReport
    rates_optimized: RateReport
    eta_optimized: PowerMatrix
    trace: OptTrace
    iterations: int
    converged: bool
    wall_time_s: float


@dataclass(frozen=True)
class ExperimentResult:
    """All trials of one configuration point plus deterministic aggregates."""

    config: SystemConfig
    master_seed: int
    objective: str
    trials: tuple

    def aggregates(self) -> dict:
        """Deterministic fold over trials in index order."""
        uni = np.array([t.rates_uniform.sum_rate for t in self.trials])
        opt = np.array([t.rates_optimized.sum_rate for t in self.trials])
        uni_min = np.array([t.rates_uniform.min_rate for t in self.trials])
        opt_min = np.array([t.rates_optimized.min_rate for t in self.trials])
        pooled_uni = np.concatenate([t.rates_uniform.per_user for t in self.trials])
        pooled_opt = np.concatenate([t.rates_optimized.per_user for t in self.trials])
        return {
            "n_trials": len(self.trials),
            "mean_sum_rate_uniform": float(uni.mean()),
            "std_sum_rate_uniform": float(uni.std()),
            "mean_sum_rate_optimized": float(opt.mean()),
            "std_sum_rate_optimized": float(opt.std()),
            "mean_min_rate_uniform": float(uni_min.mean()),
            "mean_min_rate_optimized": float(opt_min.mean()),
            "pooled_rates_uniform": pooled_uni,
            "pooled_rates_optimized": pooled_opt,
            "p05_rate_uniform": float(np.quantile(pooled_uni, 0.05)),
            "p05_rate_optimized": float(np.quantile(pooled_opt, 0.05)),
        }


def derive_trial_seed(master_seed: int, trial_index: int) -> int:
    """Stable per-trial seed: hash of (master_seed, trial_index)."""
    return int(np.random.SeedSequence([int(master_seed), int(trial_index)])
               .generate_state(1, dtype=np.uint64)[0])


def _stage_seed(trial_seed: int, stage: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(trial_seed), int(stage), int(attempt)])


def _build_channels(config: SystemConfig, trial_seed: int, attempt: int):
    scenario = geometry.drop_scenario(config, _stage_seed(trial_seed, _STAGE_DROP, attempt))
    ls = channel.large_scale_from_scenario(
        scenario, config, _stage_seed(trial_seed, _STAGE_SHADOW, attempt))
    g = channel.draw_channels(ls, config.N_AP, config.N_MS,
                              _stage_seed(trial_seed, _STAGE_SMALL, attempt))
    if config.csi == "perfect":
        g_hat = g
    else:
        pilots = training.make_pilots(config.K, config.N_MS, config.tau_p, "random",
                                      _stage_seed(trial_seed, _STAGE_PILOT, attempt))
        obs = training.receive_pilots(g, pilots, config.p_uplink_w,
                                      config.noise_power_w(),
                                      _stage_seed(trial_seed, _STAGE_NOISE, attempt))
        g_hat = training.estimate_all(obs, pilots, config.p_uplink_w)
    return scenario, channel.ChannelSet(g=g, g_hat=g_hat, large_scale=ls)


def run_trial(config: SystemConfig, trial_seed: int, objective: str = "sumrate") -> TrialResult:
    """Run one end-to-end trial; deterministic given (config, trial_seed).

    A singular estimated-channel Gram triggers a full redraw with a
    perturbed seed stream (bounded retries, then the error propagates).
    """
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
    config.validate()
    t0 = time.perf_counter()
    last_err = None
    for attempt in range(_MAX_REDRAWS):
        try:
            _, channels = _build_channels(config, trial_seed, attempt)
            clusters = geometry.select_clusters(channels.g_hat, config)
            link = build_link_gains(channels.g, channels.g_hat, clusters, config.P_k)
            break
        except SingularChannelError as exc:
            last_err = exc
    else:
        raise SingularChannelError(
            f"trial {trial_seed}: singular channel after {_MAX_REDRAWS} redraws") from last_err

    sigma_z2 = config.noise_power_w()
    ctx = RateContext(link_gains=link, sigma_z2=sigma_z2, W=config.bandwidth_hz,
                      p_max_w=config.p_max_w)
    eta_uniform = PowerMatrix.uniform(clusters, config.p_max_w)
    rates_uniform = all_user_rates(link, eta_uniform, sigma_z2, config.bandwidth_hz)

    optimizer = optimize_sumrate if objective == "sumrate" else optimize_maxmin
    eta_opt, trace = optimizer(eta_uniform, ctx, config.opt)
    rates_opt = all_user_rates(link, eta_opt, sigma_z2, config.bandwidth_hz)

    # inline invariants: feasibility, monotone trace, improvement over init
    eta_opt.validate(clusters, config.p_max_w, tol=1e-9)
    objs = trace.objectives()
    if objs.size > 1:
        prev = objs[:-1]
        if np.any(objs[1:] < prev - 1e-9 * np.abs(prev)):
            raise AssertionError("optimizer trace is not monotone")
    obj_uni = rates_uniform.sum_rate if objective == "sumrate" else rates_uniform.min_rate
    obj_opt = rates_opt.sum_rate if objective == "sumrate" else rates_opt.min_rate
    if obj_opt < obj_uni - 1e-9 * max(1.0, abs(obj_uni)):
        raise AssertionError("optimized objective fell below the uniform baseline")

    return TrialResult(
        seed=int(trial_seed), mode=config.mode, csi=config.csi,
        p_max_w=config.p_max_w, objective=objective,
        rates_uniform=rates_uniform, rates_optimized=rates_opt,
        eta_optimized=eta_opt, trace=trace,
        iterations=len(trace), converged=trace.converged,
        wall_time_s=time.perf_counter() - t0)


def run_experiment(config: SystemConfig, master_seed: int, n_trials: int,
                   objective: str = "sumrate", n_workers: int = 1) -> ExperimentResult:
    """Run ``n_trials`` independent trials with seeds derived from the master.

    Trials are independent work items; results are collected in trial-index
    order, so the worker count never changes the outcome.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    seeds = [derive_trial_seed(master_seed, i) for i in range(n_trials)]
    if n_workers <= 1:
        trials = [run_trial(config, s, objective) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            trials = list(pool.map(lambda s: run_trial(config, s, objective), seeds))
    return ExperimentResult(config=config, master_seed=int(master_seed),
                            objective=objective, trials=tuple(trials))


def _watts_to_dbm(p_w: float) -> float:
    return 10.0 * np.log10(p_w) + 30.0


_CURVE_IGNORED_FIELDS = {"p_max_w", "mode", "csi", "N_cluster", "opt"}


def _comparable_config(config: SystemConfig) -> dict:
    d = dataclasses.asdict(config)
    return {k: v for k, v in d.items() if k not in _CURVE_IGNORED_FIELDS}


def emit_sumrate_curve(results: list) -> str:
    """CSV of mean/std sum-rate per (p_max, mode, csi, allocation) series.

    All results must share every config field except the power budget, the
    mode/csi point and the cluster size.
    """
    if not results:
        raise ConfigurationError("no results to emit")
    ref = _comparable_config(results[0].config)
    for r in results[1:]:
        if _comparable_config(r.config) != ref:
            raise ConfigurationError("results stem from incompatible configs")
    rows = []
    for r in results:
        agg = r.aggregates()
        p_dbm = _watts_to_dbm(r.config.p_max_w)
        for alloc in ("uniform", "optimized"):
            rows.append((p_dbm, r.config.mode, r.config.csi, alloc,
                         agg[f"mean_sum_rate_{alloc}"], agg[f"std_sum_rate_{alloc}"],
                         agg["n_trials"]))
    rows.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
    lines = ["p_max_dbm,mode,csi,allocation,mean_sum_rate_bps,std_sum_rate_bps,n_trials"]
    for p, mode, csi, alloc, mean, std, n in rows:
        lines.append(f"{p!r},{mode},{csi},{alloc},{mean!r},{std!r},{n}")
    return "\n".join(lines) + "\n"


def emit_rate_cdf(results: list) -> str:
    """CSV of the pooled per-user rate empirical CDF, one series per
    (mode, csi, allocation), plus a ``p05`` footer row per series carrying
    the 95%-likely (5th percentile) rate."""
    if not results:
        raise ConfigurationError("no results to emit")
    lines = ["rate_bps,ecdf,mode,csi,allocation"]
    footers = []
    for r in results:
        agg = r.aggregates()
        for alloc in ("uniform", "optimized"):
            pooled = np.sort(agg[f"pooled_rates_{alloc}"])
            n = pooled.size
            for i, rate in enumerate(pooled):
                lines.append(f"{float(rate)!r},{(i + 1) / n!r},{r.config.mode},"
                             f"{r.config.csi},{alloc}")
            footers.append(f"{agg[f'p05_rate_{alloc}']!r},p05,{r.config.mode},"
                           f"{r.config.csi},{alloc}")
    return "\n".join(lines + footers) + "\n"


def run_meta(config: SystemConfig, master_seed: int, n_trials: int,
             objective: str, extra: dict | None = None) -> str:
    """JSON blob pinning everything needed to reproduce a run."""
    from . import __version__

    meta = {
        "config": config.snapshot(),
        "master_seed": int(master_seed),
        "n_trials": int(n_trials),
        "objective": objective,
        "versions": {
            "cfmimo": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        meta.update(extra)
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"
