"""System and optimizer configuration.

``SystemConfig`` collects every physical and algorithmic parameter of one
simulation run; its defaults are the reference operating point used
throughout the test suite (20 MHz bandwidth at 1.9 GHz, 60 APs / 15 MSs on
an 800 m square, 8 dB two-component shadowing, -174 dBm/Hz noise PSD with
a 6 dB noise figure).  ``OptimizerOptions`` holds the knobs of the
block-alternating power-control solvers in :mod:`cfmimo.slbm`.

Config files are flat ``key = value`` text whose keys mirror the dataclass
field names exactly; see :func:`parse_config_file`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .errors import ConfigurationError

MODES = ("cf", "uc")
CSI_MODES = ("perfect", "estimated")
BLOCK_GRANULARITIES = ("ap", "scalar")


@dataclass(frozen=True)
class OptimizerOptions:
    """Tolerances, iteration caps and step-rule parameters of the solvers.

    ``eps_floor`` defaults to ``1e-12 * p_max_w`` (set lazily from the
    system config); powers are kept at or above it during optimization so
    that the sqrt-power derivatives stay finite, and entries below
    ``10 * eps_floor`` are snapped to zero on output.
    """

    outer_tol: float = 1e-4      # relative objective change over one full sweep
    inner_tol: float = 1e-4      # relative objective change in the sequential loop
    pg_tol: float = 1e-6         # projected-gradient stationarity tolerance
    progress_tol: float = 1e-5   # relative per-step improvement floor inside a subproblem
    max_outer: int = 50
    max_inner: int = 20
    max_pg: int = 500
    eps_floor: float | None = None   # None -> 1e-12 * p_max_w
    step_init: float = 1.0       # initial step, in units of p_max / |grad|
    step_shrink: float = 0.5     # backtracking factor
    step_grow: float = 2.0       # step recovery factor after an accepted step
    armijo_c: float = 1e-4       # sufficient-increase constant
    max_backtracks: int = 60
    block_granularity: str = "ap"    # "ap": one block per AP; "scalar": per power

    def validate(self) -> None:
        for name in ("outer_tol", "inner_tol", "pg_tol", "progress_tol",
                     "step_init", "step_shrink", "step_grow", "armijo_c"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("max_outer", "max_inner", "max_pg", "max_backtracks"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.step_shrink < 1:
            raise ConfigurationError("step_shrink must be < 1")
        if self.block_granularity not in BLOCK_GRANULARITIES:
            raise ConfigurationError(
                f"block_granularity must be one of {BLOCK_GRANULARITIES}")
        if self.eps_floor is not None and self.eps_floor <= 0:
            raise ConfigurationError("eps_floor must be > 0 when given")


@dataclass(frozen=True)
class SystemConfig:
    """All parameters of one network drop / power-control run."""

    M: int = 60                  # number of APs
    K: int = 15                  # number of MSs
    N_AP: int = 4                # antennas per AP
    N_MS: int = 2                # antennas per MS
    P_k: int = 2                 # multiplexing order per user (uniform)
    tau_p: int = 32              # pilot length in samples
    area_side: float = 800.0     # side of the square deployment area [m]
    f_mhz: float = 1900.0        # carrier frequency [MHz]
    h_ap: float = 15.0           # AP antenna height [m]
    h_ms: float = 1.65           # MS antenna height [m]
    sigma_sh_db: float = 8.0     # shadowing standard deviation [dB]
    d0_m: float = 10.0           # inner path-loss breakpoint [m]
    d1_m: float = 50.0           # outer path-loss breakpoint [m]
    delta: float = 0.5           # shadowing mixing parameter in [0, 1]
    d_decorr_m: float = 100.0    # shadowing decorrelation distance [m]
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 6.0
    bandwidth_hz: float = 20e6
    p_uplink_w: float = 0.1      # per-MS pilot transmit power [W]
    p_max_w: float = 1.0         # per-AP downlink power budget [W]
    mode: str = "cf"             # "cf" or "uc"
    N_cluster: int | None = None  # MSs served per AP; required in UC mode
    csi: str = "perfect"         # "perfect" or "estimated"
    opt: OptimizerOptions = field(default_factory=OptimizerOptions)

    def validate(self) -> None:
        for name in ("M", "K", "N_AP", "N_MS", "P_k", "tau_p"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.N_MS % self.P_k != 0:
            raise ConfigurationError("P_k must divide N_MS")
        if self.tau_p < self.N_MS:
            raise ConfigurationError("tau_p must be >= N_MS")
        for name in ("area_side", "f_mhz", "h_ap", "h_ms", "d_decorr_m",
                     "bandwidth_hz", "p_uplink_w", "p_max_w"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.sigma_sh_db < 0:
            raise ConfigurationError("sigma_sh_db must be >= 0")
        if not 0 < self.d0_m < self.d1_m:
            raise ConfigurationError("breakpoints must satisfy 0 < d0_m < d1_m")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError("delta must lie in [0, 1]")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.csi not in CSI_MODES:
            raise ConfigurationError(f"csi must be one of {CSI_MODES}")
        if self.mode == "uc":
            if self.N_cluster is None:
                raise ConfigurationError("UC mode requires N_cluster")
            if not 1 <= self.N_cluster <= self.K:
                raise ConfigurationError("N_cluster must satisfy 1 <= N_cluster <= K")
        self.opt.validate()

    def noise_power_w(self) -> float:
        """Receiver noise power sigma_z^2 = PSD * bandwidth * noise figure [W]."""
        dbm = (self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)
               + self.noise_figure_db)
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def eps_floor(self) -> float:
        """Smallest power kept on a cluster link during optimization [W]."""
        if self.opt.eps_floor is not None:
            return self.opt.eps_floor
        return 1e-12 * self.p_max_w

    def snapshot(self) -> dict:
        """Flat, JSON-ready dict of all fields (optimizer options inlined)."""
        d = dataclasses.asdict(self)
        opt = d.pop("opt")
        d.update(opt)
        return d


_SYSTEM_FIELDS = {f.name: f for f in dataclasses.fields(SystemConfig) if f.name != "opt"}
_OPT_FIELDS = {f.name: f for f in dataclasses.fields(OptimizerOptions)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null"):
        return None
    if key in ("mode", "csi", "block_granularity"):
        return raw.lower()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"cannot parse value {raw!r} for key {key!r}")


def parse_config_file(path) -> dict:
    """Read a flat ``key = value`` (or ``key: value``) config file.

    Keys must be SystemConfig or OptimizerOptions field names; ``#`` starts
    a comment.  Returns a plain dict suitable for :func:`make_config`.
    """
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, raw = line.split(sep, 1)
                    break
            else:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = key.strip()
            if key not in _SYSTEM_FIELDS and key not in _OPT_FIELDS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def make_config(values: dict | None = None, **overrides) -> SystemConfig:
    """Build a validated SystemConfig from flat key/value pairs.

    ``overrides`` win over ``values``; optimizer-option keys are routed
    into the nested OptimizerOptions.  Unknown keys raise.
    """
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    sys_kwargs: dict = {}
    opt_kwargs: dict = {}
    for key, val in merged.items():
        if key in _SYSTEM_FIELDS:
            sys_kwargs[key] = val
        elif key in _OPT_FIELDS:
            opt_kwargs[key] = val
        elif key == "opt":
            pass
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    if "opt" in merged and isinstance(merged["opt"], OptimizerOptions):
        base_opt = merged["opt"]
        opt = dataclasses.replace(base_opt, **opt_kwargs) if opt_kwargs else base_opt
    else:
        opt = OptimizerOptions(**opt_kwargs)
    cfg = SystemConfig(opt=opt, **sys_kwargs)
    cfg.validate()
    return cfg
