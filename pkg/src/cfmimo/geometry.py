"""Network drops and serving-cluster construction.

A drop places APs and MSs i.i.d. uniformly on the square deployment area.
In user-centric (UC) operation every AP serves its ``N_cluster`` strongest
users by estimated-channel Frobenius norm; cell-free (CF) operation is the
special case in which every AP serves everyone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig  # noqa: F401  (re-exported: geometry owns the run config)
from .errors import ConfigurationError

__all__ = [
    "SystemConfig",
    "Scenario",
    "ClusterMap",
    "drop_scenario",
    "select_clusters",
    "scenario_to_text",
    "scenario_from_text",
]


@dataclass(frozen=True)
class Scenario:
    """Planar AP and MS positions in meters: ``ap_pos`` (M, 2), ``ms_pos`` (K, 2)."""

    ap_pos: np.ndarray
    ms_pos: np.ndarray

    def __post_init__(self):
        for name in ("ap_pos", "ms_pos"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ConfigurationError(f"{name} must have shape (n, 2)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_aps(self) -> int:
        return self.ap_pos.shape[0]

    @property
    def n_mss(self) -> int:
        return self.ms_pos.shape[0]

    def distances(self) -> np.ndarray:
        """(K, M) matrix of MS-to-AP Euclidean distances in meters."""
        diff = self.ms_pos[:, None, :] - self.ap_pos[None, :, :]
        return np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True)
class ClusterMap:
    """Bidirectional AP/MS association.

    ``served_by_ap[m]`` is the tuple of MS indices served by AP m (ascending)
    and ``serving_aps[k]`` the tuple of AP indices serving MS k.  The two
    views are consistent by construction: m in serving_aps[k] iff
    k in served_by_ap[m].
    """

    served_by_ap: tuple
    serving_aps: tuple

    @classmethod
    def from_served_lists(cls, served_by_ap, n_mss: int) -> "ClusterMap":
        served = tuple(tuple(sorted(int(k) for k in users)) for users in served_by_ap)
        serving = [[] for _ in range(n_mss)]
        for m, users in enumerate(served):
            for k in users:
                if not 0 <= k < n_mss:
                    raise ConfigurationError(f"MS index {k} out of range")
                serving[k].append(m)
        return cls(served_by_ap=served,
                   serving_aps=tuple(tuple(aps) for aps in serving))

    @property
    def n_aps(self) -> int:
        return len(self.served_by_ap)

    @property
    def n_mss(self) -> int:
        return len(self.serving_aps)

    def support_mask(self) -> np.ndarray:
        """(K, M) boolean mask of active links (k served by m)."""
        mask = np.zeros((self.n_mss, self.n_aps), dtype=bool)
        for m, users in enumerate(self.served_by_ap):
            mask[list(users), m] = True
        return mask


def drop_scenario(config: SystemConfig, seed) -> Scenario:
    """Draw one random network layout: AP then MS positions, i.i.d. uniform
    over [0, area_side]^2.  Deterministic given the seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    ap = rng.uniform(0.0, config.area_side, size=(config.M, 2))
    ms = rng.uniform(0.0, config.area_side, size=(config.K, 2))
    return Scenario(ap_pos=ap, ms_pos=ms)


def select_clusters(g_hat: np.ndarray, config: SystemConfig) -> ClusterMap:
    """Build the serving clusters from channel estimates.

    ``g_hat`` has shape (K, M, N_AP, N_MS).  In UC mode AP m keeps the
    ``N_cluster`` users with the largest Frobenius norm ||Ghat_{k,m}||_F,
    ties broken toward the smaller MS index; in CF mode every AP serves all
    users.  Cluster membership only depends on the ordering of the norms,
    so any common positive rescaling of the estimates leaves it unchanged.
    """
    g_hat = np.asarray(g_hat)
    K, M = g_hat.shape[0], g_hat.shape[1]
    if K != config.K or M != config.M:
        raise ConfigurationError("estimate array shape disagrees with config")
    if config.mode == "cf":
        served = [range(K) for _ in range(M)]
        return ClusterMap.from_served_lists(served, K)
    n = config.N_cluster
    if n is None or n > K:
        raise ConfigurationError("UC mode requires 1 <= N_cluster <= K")
    norms = np.linalg.norm(g_hat.reshape(K, M, -1), axis=-1)
    served = []
    for m in range(M):
        # sort by descending norm, then ascending index (deterministic ties)
        order = sorted(range(K), key=lambda k: (-norms[k, m], k))
        served.append(order[:n])
    return ClusterMap.from_served_lists(served, K)


def scenario_to_text(scenario: Scenario) -> str:
    """Serialize positions to a line-oriented text dump (6 decimal digits)."""
    lines = [f"aps {scenario.n_aps}", f"mss {scenario.n_mss}"]
    for m, (x, y) in enumerate(scenario.ap_pos):
        lines.append(f"ap {m} {x:.6f} {y:.6f}")
    for k, (x, y) in enumerate(scenario.ms_pos):
        lines.append(f"ms {k} {x:.6f} {y:.6f}")
    return "\n".join(lines) + "\n"


def scenario_from_text(text: str) -> Scenario:
    """Parse the dump produced by :func:`scenario_to_text`."""
    ap_rows = {}
    ms_rows = {}
    n_ap = n_ms = None
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "aps":
            n_ap = int(parts[1])
        elif parts[0] == "mss":
            n_ms = int(parts[1])
        elif parts[0] in ("ap", "ms"):
            idx = int(parts[1])
            xy = (float(parts[2]), float(parts[3]))
            (ap_rows if parts[0] == "ap" else ms_rows)[idx] = xy
    if n_ap is None or n_ms is None or len(ap_rows) != n_ap or len(ms_rows) != n_ms:
        raise ValueError("malformed scenario dump")
    ap = np.array([ap_rows[m] for m in range(n_ap)], dtype=float)
    ms = np.array([ms_rows[k] for k in range(n_ms)], dtype=float)
    return Scenario(ap_pos=ap, ms_pos=ms)
