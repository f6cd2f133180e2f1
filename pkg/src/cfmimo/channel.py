"""Large-scale propagation and small-scale fading.

The link gain between MS k and AP m factors as

    beta_{k,m} = 10^(PL_{k,m}/10) * 10^(sigma_sh * z_{k,m} / 10),

with PL the three-slope path loss in dB and z a unit-variance shadowing
field built from two spatially correlated components: a per-AP process and
a per-MS process, mixed by a parameter delta.  True channels are
G_{k,m} = sqrt(beta_{k,m}) * H_{k,m} with i.i.d. CN(0, 1) entries in H.

Shadowing is frozen per trial (block fading); there is no temporal
evolution.  All dB/linear conversions are base-10 as written above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import ConfigurationError, DomainError, NumericalError
from .geometry import Scenario

__all__ = [
    "LargeScale",
    "ChannelSet",
    "cost_hata_constant",
    "path_loss_db",
    "shadow_fields",
    "large_scale_gain",
    "draw_channels",
    "large_scale_from_scenario",
    "large_scale_to_csv",
    "complex_normal",
]

# eigenvalues of the shadowing covariance more negative than this (relative
# to the largest) indicate a broken distance matrix, not roundoff
_EIG_CLAMP_REL = -1e-8


@dataclass(frozen=True)
class LargeScale:
    """Per-link large-scale state: ``pl_db``, shadowing field ``z`` and the
    resulting linear gain ``beta``, each of shape (K, M)."""

    beta: np.ndarray
    pl_db: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class ChannelSet:
    """True channels ``g``, estimates ``g_hat`` (both (K, M, N_AP, N_MS))
    and the large-scale state they were drawn from."""

    g: np.ndarray
    g_hat: np.ndarray | None
    large_scale: LargeScale


def cost_hata_constant(f_mhz: float, h_ap: float, h_ms: float) -> float:
    """Fixed part L (dB) of the three-slope path-loss model.

    L = 46.3 + 33.9 log10(f) - 13.82 log10(h_AP)
        - [1.11 log10(f) - 0.7] h_MS + 1.56 log10(f) - 0.8

    with f in MHz and antenna heights in meters.  h_ms = 0 is allowed (it
    only scales a linear term); f and h_ap must be positive.
    """
    if f_mhz <= 0 or h_ap <= 0:
        raise DomainError("carrier frequency and AP height must be > 0")
    if h_ms < 0:
        raise DomainError("MS height must be >= 0")
    lf = np.log10(f_mhz)
    return float(46.3 + 33.9 * lf - 13.82 * np.log10(h_ap)
                 - (1.11 * lf - 0.7) * h_ms + 1.56 * lf - 0.8)


def path_loss_db(d_m, d0_m: float, d1_m: float, L: float):
    """Three-slope path loss (dB) at distance d_m (meters; scalar or array).

        -L - 35 log10(d)              d > d1
        -L - 10 log10(d1^1.5 d^2)     d0 < d <= d1
        -L - 10 log10(d1^1.5 d0^2)    d <= d0

    Continuous at both breakpoints; constant below d0.
    """
    if not 0 < d0_m < d1_m:
        raise ConfigurationError("breakpoints must satisfy 0 < d0_m < d1_m")
    d = np.asarray(d_m, dtype=float)
    if np.any(d < 0):
        raise DomainError("distances must be >= 0")
    ld1 = np.log10(d1_m)
    # log10(d) only evaluated where d > d0 > 0
    safe = np.where(d > d0_m, d, d0_m)
    far = -L - 35.0 * np.log10(safe)
    mid = -L - 10.0 * (1.5 * ld1 + 2.0 * np.log10(safe))
    near = -L - 10.0 * (1.5 * ld1 + 2.0 * np.log10(d0_m))
    out = np.where(d > d1_m, far, np.where(d > d0_m, mid, near))
    return out if out.ndim else float(out)


def _correlated_normals(dist: np.ndarray, d_decorr_m: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Draw one sample of a zero-mean Gaussian vector with covariance
    C[i,j] = 2^(-dist[i,j] / d_decorr) via a symmetric eigendecomposition
    square root; small negative eigenvalues from roundoff are clamped to 0.
    """
    cov = np.power(2.0, -dist / d_decorr_m)
    w, v = np.linalg.eigh(cov)
    if w[0] < _EIG_CLAMP_REL * max(w[-1], 1.0):
        raise NumericalError(
            "shadowing covariance is not PSD; distance matrix:\n" + repr(dist))
    w = np.clip(w, 0.0, None)
    root = v * np.sqrt(w)[None, :]
    return root @ rng.standard_normal(dist.shape[0])


def shadow_fields(scenario: Scenario, delta: float, d_decorr_m: float, seed) -> np.ndarray:
    """Draw the (K, M) shadowing field z_{k,m} = sqrt(delta) a_m + sqrt(1-delta) b_k.

    a and b are zero-mean Gaussian vectors over APs and MSs with covariances
    2^(-d_AP(m,m')/d_decorr) and 2^(-d_MS(k,k')/d_decorr); each entry of z
    has unit variance.  Deterministic given the seed (a is drawn first).
    """
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError("delta must lie in [0, 1]")
    if d_decorr_m <= 0:
        raise ConfigurationError("d_decorr_m must be > 0")
    rng = np.random.default_rng(seed)
    d_ap = np.linalg.norm(scenario.ap_pos[:, None, :] - scenario.ap_pos[None, :, :], axis=-1)
    d_ms = np.linalg.norm(scenario.ms_pos[:, None, :] - scenario.ms_pos[None, :, :], axis=-1)
    a = _correlated_normals(d_ap, d_decorr_m, rng)
    b = _correlated_normals(d_ms, d_decorr_m, rng)
    return np.sqrt(delta) * a[None, :] + np.sqrt(1.0 - delta) * b[:, None]


def large_scale_gain(pl_db: np.ndarray, z: np.ndarray, sigma_sh_db: float) -> np.ndarray:
    """Linear gain beta = 10^(PL/10) * 10^(sigma_sh z / 10), entrywise."""
    pl_db = np.asarray(pl_db, dtype=float)
    z = np.asarray(z, dtype=float)
    if pl_db.shape != z.shape:
        raise ConfigurationError("pl_db and z must have identical shapes")
    return np.power(10.0, pl_db / 10.0) * np.power(10.0, sigma_sh_db * z / 10.0)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian entries of unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channels(large_scale, n_ap: int, n_ms: int, seed) -> np.ndarray:
    """Draw true channels G_{k,m} = sqrt(beta_{k,m}) H_{k,m}, H ~ i.i.d. CN(0,1).

    ``large_scale`` may be a LargeScale or a plain (K, M) beta array.
    Returns a (K, M, n_ap, n_ms) complex array; deterministic given seed.
    """
    beta = large_scale.beta if isinstance(large_scale, LargeScale) else np.asarray(large_scale)
    rng = np.random.default_rng(seed)
    h = complex_normal(rng, (*beta.shape, n_ap, n_ms))
    return np.sqrt(beta)[..., None, None] * h


def large_scale_from_scenario(scenario: Scenario, config: SystemConfig, seed) -> LargeScale:
    """Path loss + correlated shadowing for every MS/AP pair of a drop."""
    L = cost_hata_constant(config.f_mhz, config.h_ap, config.h_ms)
    pl = path_loss_db(scenario.distances(), config.d0_m, config.d1_m, L)
    z = shadow_fields(scenario, config.delta, config.d_decorr_m, seed)
    beta = large_scale_gain(pl, z, config.sigma_sh_db)
    return LargeScale(beta=beta, pl_db=pl, z=z)


def large_scale_to_csv(ls: LargeScale) -> str:
    """Dump (k, m, pl_db, z, beta) rows for regression comparison."""
    lines = ["k,m,pl_db,z,beta"]
    K, M = ls.beta.shape
    for k in range(K):
        for m in range(M):
            lines.append(f"{k},{m},{ls.pl_db[k, m]!r},{ls.z[k, m]!r},{ls.beta[k, m]!r}")
    return "\n".join(lines) + "\n"
