"""Effective link gains, per-user rates, and the DC decomposition.

Each AP applies channel-inversion beamforming toward its served users.
After the MS-side stream combiner L_k, the downlink couples through the
per-AP effective gains

    A_{k,j,m} = L_k^H G_{k,m}^H Ghat_{j,m} (Ghat_{j,m}^H Ghat_{j,m})^{-1} L_j

and their power-weighted composites A_{k,j} = sum_{m in M(j)} sqrt(eta_{j,m}) A_{k,j,m}.
User k's rate is the log-det expression

    R_k = W log2 det(M1_k) - W log2 det(M2_k),
    M1_k = sigma_z^2 L_k^H L_k + sum_j     A_{k,j} A_{k,j}^H,
    M2_k = sigma_z^2 L_k^H L_k + sum_{j!=k} A_{k,j} A_{k,j}^H,

which is also the difference-of-parts split (g1 = first term, g2 = second)
used by the power-control solvers: g2 is linearized around an expansion
point to get a surrogate of R_k that is tight to first order there.

Composites are always evaluated as B_j = sum_m sqrt(eta) A (never via the
equivalent O(M^2) double sum, which survives only as a test oracle), and
log-dets go through a Cholesky factorization of the Hermitian
positive-definite argument; inverses appear only behind linear solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError, SingularChannelError
from .geometry import ClusterMap

__all__ = [
    "StreamSelector",
    "LinkGains",
    "PowerMatrix",
    "RateReport",
    "stream_selector",
    "precoder",
    "effective_gain",
    "composite_gain",
    "build_link_gains",
    "user_rate",
    "all_user_rates",
    "rate_dc_parts",
    "grad_g2",
    "rate_lower_bound",
]

# channel Gram matrices with condition number above this are treated as singular
COND_LIMIT = 1e12

LN2 = float(np.log(2.0))

StreamSelector = np.ndarray  # (N_MS, P_k) 0/1 selector, L_k = I_{P_k} (x) 1_{N_MS/P_k}


def stream_selector(n_ms: int, p_k: int) -> np.ndarray:
    """Stream combiner L = I_{P} kron 1_{N_MS/P}; satisfies L^H L = (N_MS/P) I."""
    if p_k < 1 or n_ms % p_k != 0:
        raise ConfigurationError("P_k must be a positive divisor of N_MS")
    return np.kron(np.eye(p_k), np.ones((n_ms // p_k, 1)))


def _gram_solve(g_hat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (Ghat^H Ghat) X = rhs, rejecting ill-conditioned Grams."""
    gram = g_hat.conj().T @ g_hat
    if not np.all(np.isfinite(gram)):
        raise SingularChannelError("channel estimate contains non-finite entries")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularChannelError(
            f"estimated channel Gram matrix has condition number {cond:.3e}")
    return np.linalg.solve(gram, rhs)


def precoder(g_hat_km: np.ndarray, l_k: np.ndarray) -> np.ndarray:
    """Channel-inversion precoder Q = Ghat (Ghat^H Ghat)^{-1} L / sqrt(tr(L^H (Ghat^H Ghat)^{-1} L)).

    Trace-normalized so that tr(Q^H Q) = 1; invariant to positive rescaling
    of the estimate.
    """
    x = _gram_solve(g_hat_km, l_k)           # (N_MS, P)
    norm2 = np.real(np.trace(l_k.conj().T @ x))
    if norm2 <= 0:
        raise NumericalError("precoder normalization is not positive")
    return (g_hat_km @ x) / np.sqrt(norm2)


def effective_gain(g_km: np.ndarray, g_hat_jm: np.ndarray,
                   l_k: np.ndarray, l_j: np.ndarray) -> np.ndarray:
    """Single-link gain A_{k,j,m} = L_k^H G_{k,m}^H Ghat_{j,m} (Ghat^H Ghat)^{-1} L_j."""
    x = _gram_solve(g_hat_jm, l_j)
    return l_k.conj().T @ (g_km.conj().T @ (g_hat_jm @ x))


def composite_gain(a_kj_all_m: np.ndarray, eta_row_j: np.ndarray, serving_set) -> np.ndarray:
    """Power-weighted composite A_{k,j} = sum_{m in M(j)} sqrt(eta_{j,m}) A_{k,j,m}.

    ``a_kj_all_m`` is (M, P_k, P_j); ``eta_row_j`` is the length-M power row
    of user j.  Entries off the serving set are ignored.
    """
    eta_row_j = np.asarray(eta_row_j, dtype=float)
    serving = list(serving_set)
    if serving and np.any(eta_row_j[serving] < 0):
        raise DomainError("powers must be >= 0")
    out = np.zeros(a_kj_all_m.shape[1:], dtype=complex)
    for m in serving:
        out += np.sqrt(eta_row_j[m]) * a_kj_all_m[m]
    return out


@dataclass(frozen=True)
class LinkGains:
    """All per-AP effective gains of one channel realization.

    ``a[k, j, m]`` is the (P, P) matrix A_{k,j,m}; entries with m not in
    M(j) are exactly zero.  The cluster map travels with the gains because
    every downstream evaluation needs the power support.
    """

    a: np.ndarray            # (K, K, M, P, P) complex
    cluster: ClusterMap
    n_ms: int
    p_k: int

    @property
    def n_users(self) -> int:
        return self.a.shape[0]

    @property
    def n_aps(self) -> int:
        return self.a.shape[2]

    def lhl(self) -> np.ndarray:
        """L^H L = (N_MS / P) I, shared by every user."""
        return (self.n_ms / self.p_k) * np.eye(self.p_k)


def build_link_gains(g: np.ndarray, g_hat: np.ndarray, cluster: ClusterMap,
                     p_k: int) -> LinkGains:
    """Compute A_{k,j,m} for every receiver k and every served link (j, m).

    ``g`` and ``g_hat`` are (K, M, N_AP, N_MS).  Raises SingularChannelError
    if any needed Gram matrix Ghat^H Ghat is too ill-conditioned.
    """
    g = np.asarray(g)
    g_hat = np.asarray(g_hat)
    if g.shape != g_hat.shape:
        raise ConfigurationError("g and g_hat must have identical shapes")
    K, M, _, n_ms = g.shape
    l = stream_selector(n_ms, p_k)
    a = np.zeros((K, K, M, p_k, p_k), dtype=complex)
    g_h = np.conj(np.swapaxes(g, -1, -2))          # (K, M, N_MS, N_AP)
    for j in range(K):
        for m in cluster.serving_aps[j]:
            x = _gram_solve(g_hat[j, m], l)        # (N_MS, P)
            t = g_hat[j, m] @ x                    # (N_AP, P)
            # A_{k,j,m} = L^H (G_{k,m}^H t) for all receivers k at once
            a[:, j, m] = np.einsum("np,knq->kpq", l.conj(), g_h[:, m] @ t)
    return LinkGains(a=a, cluster=cluster, n_ms=n_ms, p_k=p_k)


@dataclass(frozen=True)
class PowerMatrix:
    """Downlink powers eta (K, M) in watts, supported on the cluster map."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.ascontiguousarray(np.asarray(self.eta, dtype=float))
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def uniform(cls, cluster: ClusterMap, p_max_w: float) -> "PowerMatrix":
        """Budget split evenly over each AP's served users."""
        eta = np.zeros((cluster.n_mss, cluster.n_aps))
        for m, users in enumerate(cluster.served_by_ap):
            if users:
                eta[list(users), m] = p_max_w / len(users)
        return cls(eta=eta)

    def validate(self, cluster: ClusterMap, p_max_w: float, tol: float = 1e-12) -> None:
        if np.any(self.eta < 0):
            raise DomainError("powers must be >= 0")
        mask = cluster.support_mask()
        if np.any(self.eta[~mask] != 0.0):
            raise DomainError("powers outside the cluster support must be zero")
        sums = self.eta.sum(axis=0)
        if np.any(sums > p_max_w * (1 + tol) + tol):
            raise DomainError("per-AP power budget exceeded")


@dataclass(frozen=True)
class RateReport:
    """Per-user rates in bit/s plus their sum and minimum."""

    per_user: np.ndarray
    sum_rate: float
    min_rate: float

    @classmethod
    def from_rates(cls, per_user: np.ndarray) -> "RateReport":
        per_user = np.asarray(per_user, dtype=float)
        return cls(per_user=per_user,
                   sum_rate=float(per_user.sum()),
                   min_rate=float(per_user.min()))


def _as_eta_array(eta) -> np.ndarray:
    return eta.eta if isinstance(eta, PowerMatrix) else np.asarray(eta, dtype=float)


def logdet_hpd(mats: np.ndarray) -> np.ndarray:
    """Natural-log determinant of a stack of Hermitian positive-definite
    matrices via Cholesky; raises NumericalError if any is not PD."""
    mats = 0.5 * (mats + np.conj(np.swapaxes(mats, -1, -2)))
    try:
        chol = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc
    diag = np.real(np.einsum("...ii->...i", chol))
    return 2.0 * np.sum(np.log(diag), axis=-1)


def composite_all(a: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """B[k, j] = sum_m sqrt(eta[j, m]) a[k, j, m], shape (K, K, P, P)."""
    if np.any(eta < 0):
        raise DomainError("powers must be >= 0")
    return np.einsum("jm,kjmpq->kjpq", np.sqrt(eta), a)


def m1_from_composite(b: np.ndarray, sigma_z2: float, lhl: np.ndarray) -> np.ndarray:
    """Stack of signal-plus-interference matrices M1_k (all transmitters)."""
    s = np.einsum("kjpq,kjrq->kpr", b, b.conj())
    return sigma_z2 * lhl[None, :, :] + s


def dc_parts_from_composite(b: np.ndarray, sigma_z2: float, lhl: np.ndarray,
                            W: float) -> tuple[np.ndarray, np.ndarray]:
    """Both log-det parts for every user, from composites b (K, K, P, P).

    Returns (g1, g2) in bit/s: g1 keeps all transmitters, g2 drops j = k.
    """
    K = b.shape[0]
    m1 = m1_from_composite(b, sigma_z2, lhl)
    own = b[np.arange(K), np.arange(K)]
    m2 = m1 - np.einsum("kpq,krq->kpr", own, own.conj())
    g1 = W * logdet_hpd(m1) / LN2
    g2 = W * logdet_hpd(m2) / LN2
    return g1, g2


def _block_sqrt_grads(b: np.ndarray, a_m: np.ndarray, users, mats: np.ndarray,
                      eta_block: np.ndarray, W: float,
                      exclude_own: bool) -> np.ndarray:
    """Gradient of W log2 det(mats(b)) w.r.t. the block powers eta_{j,m}.

    ``mats`` is the stack the log-det is taken of (M1 or M2 per user),
    ``a_m`` the (K, n, P, P) per-AP gains of the block's users and ``b`` the
    current composites.  For each user k and block variable j:

        d/d eta_{j,m} = (W/ln2) Re tr(M^{-1} A_{k,j,m} B_{k,j}^H) / sqrt(eta_{j,m}),

    with the j = k column zeroed when ``exclude_own`` (that term is absent
    from M2).  Returns (K, n).
    """
    users = np.asarray(users, dtype=int)
    b_users = b[:, users]                                   # (K, n, P, P)
    x = np.linalg.solve(mats[:, None, :, :], a_m)           # M^{-1} A, (K, n, P, P)
    t = np.real(np.einsum("knpq,knpq->kn", x, b_users.conj()))
    grads = (W / LN2) * t / np.sqrt(eta_block)[None, :]
    if exclude_own:
        for i, j in enumerate(users):
            grads[j, i] = 0.0
    return grads


def block_dc_grads(link_or_a, b: np.ndarray, block_m: int, users,
                   eta_block: np.ndarray, sigma_z2: float, lhl: np.ndarray,
                   W: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-user gradients of g1 and g2 w.r.t. one AP's power block.

    ``b`` must be the composites at the same powers ``eta_block`` describes
    (length-n vector over ``users``, all entries > 0).  Returns
    (grad_g1, grad_g2), each (K, n).
    """
    a = link_or_a.a if isinstance(link_or_a, LinkGains) else link_or_a
    users = list(users)
    K = b.shape[0]
    a_m = a[:, users, block_m]                              # (K, n, P, P)
    base = sigma_z2 * lhl
    s = np.einsum("kjpq,kjrq->kpr", b, b.conj())
    own = b[np.arange(K), np.arange(K)]
    m1 = base[None, :, :] + s
    m2 = m1 - np.einsum("kpq,krq->kpr", own, own.conj())
    m1 = 0.5 * (m1 + np.conj(np.swapaxes(m1, -1, -2)))
    m2 = 0.5 * (m2 + np.conj(np.swapaxes(m2, -1, -2)))
    g1 = _block_sqrt_grads(b, a_m, users, m1, eta_block, W, exclude_own=False)
    g2 = _block_sqrt_grads(b, a_m, users, m2, eta_block, W, exclude_own=True)
    return g1, g2


def rate_dc_parts(link_gains: LinkGains, eta, sigma_z2: float, W: float,
                  k: int) -> tuple[float, float]:
    """The two concave-split parts of user k's rate; g1 - g2 equals the rate."""
    b = composite_all(link_gains.a, _as_eta_array(eta))
    g1, g2 = dc_parts_from_composite(b, sigma_z2, link_gains.lhl(), W)
    return float(g1[k]), float(g2[k])


def user_rate(link_gains: LinkGains, eta, sigma_z2: float, W: float, k: int) -> float:
    """Achievable rate of user k in bit/s at powers ``eta``."""
    g1, g2 = rate_dc_parts(link_gains, eta, sigma_z2, W, k)
    return g1 - g2


def all_user_rates(link_gains: LinkGains, eta, sigma_z2: float, W: float) -> RateReport:
    """Rates of every user at powers ``eta`` (PowerMatrix or (K, M) array)."""
    b = composite_all(link_gains.a, _as_eta_array(eta))
    g1, g2 = dc_parts_from_composite(b, sigma_z2, link_gains.lhl(), W)
    return RateReport.from_rates(g1 - g2)


def grad_g2(link_gains: LinkGains, eta, block_m: int, sigma_z2: float, W: float,
            k: int, eps_floor: float) -> np.ndarray:
    """Gradient of user k's g2 part w.r.t. AP ``block_m``'s powers.

    Returned vector is aligned with ``cluster.served_by_ap[block_m]``; the
    entry for j = k is zero (user k's own signal does not enter g2).  All
    block powers must be at least ``eps_floor`` (the sqrt derivative is
    singular at zero).
    """
    eta = _as_eta_array(eta)
    users = list(link_gains.cluster.served_by_ap[block_m])
    eta_block = eta[users, block_m]
    if np.any(eta_block < eps_floor):
        raise DomainError("block powers below eps_floor; project first")
    b = composite_all(link_gains.a, eta)
    _, g2 = block_dc_grads(link_gains, b, block_m, users, eta_block,
                           sigma_z2, link_gains.lhl(), W)
    return g2[k]


def rate_lower_bound(link_gains: LinkGains, eta_m: np.ndarray, eta_m0: np.ndarray,
                     eta_others, block_m: int, sigma_z2: float, W: float,
                     k: int) -> float:
    """First-order surrogate of user k's rate in AP ``block_m``'s powers.

    g1 is evaluated at ``eta_m`` while g2 is replaced by its tangent at
    ``eta_m0``; both block vectors are aligned with
    ``cluster.served_by_ap[block_m]`` and ``eta_others`` supplies the other
    APs' powers (its block column is ignored).  The surrogate and its
    gradient match the true rate at ``eta_m0``.
    """
    users = list(link_gains.cluster.served_by_ap[block_m])
    eta_m = np.asarray(eta_m, dtype=float)
    eta_m0 = np.asarray(eta_m0, dtype=float)
    eta = _as_eta_array(eta_others).copy()
    lhl = link_gains.lhl()

    eta[:, block_m] = 0.0
    eta[users, block_m] = eta_m0
    b0 = composite_all(link_gains.a, eta)
    _, g2_0 = dc_parts_from_composite(b0, sigma_z2, lhl, W)
    _, dg2_0 = block_dc_grads(link_gains, b0, block_m, users, eta_m0,
                              sigma_z2, lhl, W)

    eta[users, block_m] = eta_m
    b = composite_all(link_gains.a, eta)
    g1, _ = dc_parts_from_composite(b, sigma_z2, lhl, W)

    return float(g1[k] - g2_0[k] - dg2_0[k] @ (eta_m - eta_m0))
