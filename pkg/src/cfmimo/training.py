"""Uplink pilot transmission and pilot-matched channel estimation.

Every MS k owns a row-orthonormal pilot matrix Phi_k (N_MS x tau_p,
Phi_k Phi_k^H = I).  APs observe the superposition

    Y_m = sum_k sqrt(p_k) G_{k,m} Phi_k + W_m,

and estimate each user's channel by correlation,
Ghat_{k,m} = Y_m Phi_k^H / sqrt(p_k).  With mutually orthogonal pilots and
no noise this recovers G exactly; with shared pilot space the cross terms
sum_{j != k} sqrt(p_j/p_k) G_{j,m} Phi_j Phi_k^H contaminate the estimate.

The training-phase receiver noise uses the same per-sample variance as the
downlink receiver (one noise model for the whole system).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal
from .errors import ConfigurationError, DomainError

__all__ = [
    "PilotBook",
    "PilotObservation",
    "make_pilots",
    "receive_pilots",
    "pm_estimate",
    "estimate_all",
]


@dataclass(frozen=True)
class PilotBook:
    """Per-user pilot matrices ``phi`` of shape (K, N_MS, tau_p)."""

    phi: np.ndarray

    @property
    def n_users(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class PilotObservation:
    """Per-AP received pilot blocks ``y`` of shape (M, N_AP, tau_p)."""

    y: np.ndarray


def make_pilots(K: int, N_MS: int, tau_p: int, mode: str, seed=None) -> PilotBook:
    """Build a pilot book.

    mode="random": each Phi_k is an independent row-orthonormalization of a
    complex Gaussian matrix; different users' pilots are non-orthogonal
    almost surely.  mode="orthogonal" (needs K*N_MS <= tau_p): users get
    disjoint rows of the unitary tau_p-point DFT matrix, so
    Phi_k Phi_j^H = 0 for j != k.  Both modes give Phi_k Phi_k^H = I.
    """
    if tau_p < N_MS:
        raise ConfigurationError("tau_p must be >= N_MS")
    if mode == "random":
        rng = np.random.default_rng(seed)
        phi = np.empty((K, N_MS, tau_p), dtype=complex)
        for k in range(K):
            z = complex_normal(rng, (N_MS, tau_p))
            q, _ = np.linalg.qr(z.conj().T)       # q: tau_p x N_MS, orthonormal columns
            phi[k] = q.conj().T
        return PilotBook(phi=phi)
    if mode == "orthogonal":
        if K * N_MS > tau_p:
            raise ConfigurationError("orthogonal pilots need K*N_MS <= tau_p")
        n = np.arange(tau_p)
        dft = np.exp(-2j * np.pi * np.outer(n, n) / tau_p) / np.sqrt(tau_p)
        phi = np.stack([dft[k * N_MS:(k + 1) * N_MS, :] for k in range(K)])
        return PilotBook(phi=phi)
    raise ConfigurationError(f"unknown pilot mode {mode!r}")


def receive_pilots(g: np.ndarray, pilots: PilotBook, p_uplink_w: float,
                   noise_var_w: float, seed=None) -> PilotObservation:
    """Synthesize Y_m = sum_k sqrt(p) G_{k,m} Phi_k + W_m at every AP.

    ``g`` is (K, M, N_AP, N_MS); noise entries are i.i.d. CN(0, noise_var_w)
    (zero variance gives a noiseless observation).  Deterministic given seed.
    """
    if p_uplink_w < 0:
        raise DomainError("p_uplink_w must be >= 0")
    if noise_var_w < 0:
        raise DomainError("noise_var_w must be >= 0")
    y = np.sqrt(p_uplink_w) * np.einsum("kman,knt->mat", g, pilots.phi)
    if noise_var_w > 0:
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(noise_var_w) * complex_normal(rng, y.shape)
    return PilotObservation(y=np.ascontiguousarray(y))


def pm_estimate(y_m: np.ndarray, phi_k: np.ndarray, p_k: float) -> np.ndarray:
    """Pilot-matched estimate Ghat = Y_m Phi_k^H / sqrt(p_k), (N_AP x N_MS)."""
    if p_k <= 0:
        raise DomainError("p_k must be > 0")
    return (y_m @ phi_k.conj().T) / np.sqrt(p_k)


def estimate_all(obs: PilotObservation, pilots: PilotBook, p_uplink_w: float) -> np.ndarray:
    """Pilot-matched estimates for every (k, m) pair, shape (K, M, N_AP, N_MS)."""
    if p_uplink_w <= 0:
        raise DomainError("p_uplink_w must be > 0")
    g_hat = np.einsum("mat,knt->kman", obs.y, pilots.phi.conj())
    return g_hat / np.sqrt(p_uplink_w)
