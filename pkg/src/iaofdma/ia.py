"""Frequency-domain interference alignment over subcarrier pairs.

Each pair ``(n, n + N/2)`` turns the three-cell downlink into a three-user
2x2 interference channel with diagonal channel matrices.  Precoders ``v``
and receive filters ``u`` (row vectors) come from the alternating
leakage-minimization iteration; only the diagonals of the channel
matrices are stored, as arrays of shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import N_CELLS, ChannelTensor, make_rng

HERMITIAN_TOL = 1e-10

# (m, j) ordered pairs of receiving cell m and interfering BS j != m
_CROSS = [(m, j) for m in range(N_CELLS) for j in range(N_CELLS) if j != m]


@dataclass(frozen=True)
class SubcarrierPairing:
    """Zero-based subcarrier pairs; ``pairs[i] = (i, i + N/2)``."""

    n_subcarriers: int
    pairs: np.ndarray  # (N/2, 2) int

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def pair_subcarriers(n_subcarriers: int) -> SubcarrierPairing:
    if n_subcarriers < 2 or n_subcarriers % 2:
        raise ValueError(f"pairing needs an even number of subcarriers >= 2, got {n_subcarriers}")
    half = n_subcarriers // 2
    first = np.arange(half)
    return SubcarrierPairing(n_subcarriers, np.stack([first, first + half], axis=1))


def build_paired_channels(tensor: ChannelTensor, pairing: SubcarrierPairing) -> np.ndarray:
    """Diagonals of the paired channel matrices.

    Returns ``d[j, m, k, i, :] = (h[j, m, k, n1], h[j, m, k, n2])`` for pair
    ``i = (n1, n2)``; the full matrix is ``np.diag(d[j, m, k, i])``.
    """
    if tensor.dims.n_subcarriers != pairing.n_subcarriers:
        raise ValueError("tensor and pairing disagree on the number of subcarriers")
    return np.stack([tensor.gains[..., pairing.pairs[:, 0]], tensor.gains[..., pairing.pairs[:, 1]]], axis=-1)


def paired_matrix(diagonal: np.ndarray) -> np.ndarray:
    """Expand stored diagonals ``(..., 2)`` into full ``(..., 2, 2)`` matrices."""
    out = np.zeros(diagonal.shape + (2,), dtype=complex)
    out[..., 0, 0] = diagonal[..., 0]
    out[..., 1, 1] = diagonal[..., 1]
    return out


def _phase_fix(vec: np.ndarray) -> np.ndarray:
    """Rotate so the first nonzero component is real and nonnegative."""
    first = np.where(np.abs(vec[..., 0]) > 0, vec[..., 0], vec[..., 1])
    mag = np.abs(first)
    rot = np.where(mag > 0, np.conj(first) / np.where(mag > 0, mag, 1.0), 1.0)
    return vec * rot[..., None]


def _least_eigvec(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Batched least eigenvector of [[a, b], [conj(b), c]] with a, c real."""
    half_sum = 0.5 * (a + c)
    radius = np.sqrt((0.5 * (a - c)) ** 2 + np.abs(b) ** 2)
    mu = half_sum - radius
    # two candidate null vectors of Q - mu I; keep the better conditioned one
    use_first = np.abs(mu - c) >= np.abs(mu - a)
    v0 = np.where(use_first, mu - c, b)
    v1 = np.where(use_first, np.conj(b), mu - a)
    vec = np.stack([v0.astype(complex), v1.astype(complex)], axis=-1)
    norm = np.linalg.norm(vec, axis=-1)
    degenerate = norm <= 1e-300
    vec = np.where(degenerate[..., None], np.array([1.0 + 0j, 0j]), vec / np.where(degenerate, 1.0, norm)[..., None])
    return _phase_fix(vec)


def least_eigvec_2x2_hermitian(Q) -> np.ndarray:
    """Unit eigenvector of the smaller eigenvalue of a 2x2 Hermitian PSD matrix.

    Closed form from the characteristic polynomial.  The phase is fixed so
    the first nonzero component is real and nonnegative.
    """
    Q = np.asarray(Q, dtype=complex)
    if Q.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    if np.max(np.abs(Q - Q.conj().T)) > HERMITIAN_TOL:
        raise ValueError("matrix is not Hermitian")
    a, c = Q[0, 0].real, Q[1, 1].real
    b = Q[0, 1]
    if 0.5 * (a + c) - np.sqrt((0.5 * (a - c)) ** 2 + abs(b) ** 2) < -HERMITIAN_TOL:
        raise ValueError("matrix is not positive semidefinite")
    return _least_eigvec(np.asarray(a), np.asarray(b), np.asarray(c))


def _outer_sum(vectors):
    """Entries (a, b, c) of sum_i x_i x_i^H for 2-vectors x_i."""
    a = sum(np.abs(x[..., 0]) ** 2 for x in vectors)
    c = sum(np.abs(x[..., 1]) ** 2 for x in vectors)
    b = sum(x[..., 0] * np.conj(x[..., 1]) for x in vectors)
    return a, b, c


def _leakage(H: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    total = np.zeros(H.shape[:-3])
    for m, j in _CROSS:
        total = total + np.abs(np.sum(u[..., m, :] * H[..., j, m, :] * v[..., j, :], axis=-1)) ** 2
    return total


def _forward(H, v):
    u = np.empty_like(v)
    for m in range(N_CELLS):
        a, b, c = _outer_sum([H[..., j, m, :] * v[..., j, :] for j in range(N_CELLS) if j != m])
        u[..., m, :] = np.conj(_least_eigvec(a, b, c))
    return u


def _reciprocal(H, u):
    v = np.empty_like(u)
    for j in range(N_CELLS):
        # reciprocal channel H^H driven by filter u_m^H
        a, b, c = _outer_sum([np.conj(H[..., j, m, :] * u[..., m, :]) for m in range(N_CELLS) if m != j])
        v[..., j, :] = _least_eigvec(a, b, c)
    return v


@dataclass
class IABatch:
    """Distributed IA results for a batch of independent instances.

    ``H`` has shape ``(B, 3, 3, 2)`` (transmitter j, receiving cell m,
    diagonal); precoders/filters have shape ``(B, 3, 2)``.
    """

    precoders: np.ndarray
    filters: np.ndarray
    leakage: np.ndarray
    iterations: np.ndarray
    history: np.ndarray  # (B, max_iters) leakage after each iteration, NaN after stopping

    def effective_channel(self, H: np.ndarray) -> np.ndarray:
        """Complex effective gains ``u_m H_{j m} v_j`` as ``(B, 3, 3)`` indexed [j, m]."""
        return np.einsum("bmc,bjmc,bjc->bjm", self.filters, H, self.precoders)


def initial_precoders(batch: int, n_starts: int = 1, seed=None) -> np.ndarray:
    """Start points of shape (n_starts, batch, 3, 2); the first is always (1, 1)/sqrt(2)."""
    v = np.empty((n_starts, batch, N_CELLS, 2), dtype=complex)
    v[0] = 1 / np.sqrt(2.0)
    if n_starts > 1:
        rng = make_rng(0 if seed is None else seed)
        z = rng.standard_normal((n_starts - 1, batch, N_CELLS, 2, 2))
        z = z[..., 0] + 1j * z[..., 1]
        v[1:] = _phase_fix(z / np.linalg.norm(z, axis=-1, keepdims=True))
    return v


def distributed_ia_batch(
    H: np.ndarray,
    max_iters: int = 50,
    leakage_tol: float = 1e-8,
    n_starts: int = 1,
    seed=None,
    init: np.ndarray | None = None,
) -> IABatch:
    """Alternating leakage minimization on every instance in ``H`` (shape ``(B, 3, 3, 2)``).

    One iteration is a forward step (each ``u_m`` is the least eigenvector
    of its interference covariance) followed by a reciprocal step (each
    ``v_j`` the least eigenvector of its leakage covariance through the
    conjugate channels).  An instance stops once its leakage drops to
    ``leakage_tol``.  With several starts the lowest final leakage wins.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    H = np.asarray(H, dtype=complex)
    B = H.shape[0]
    starts = initial_precoders(B, n_starts, seed) if init is None else np.asarray(init, dtype=complex)[None]
    best = None
    for v in starts:
        v = v.copy()
        u = _forward(H, v)
        hist = np.full((B, max_iters), np.nan)
        iters = np.zeros(B, dtype=int)
        active = np.ones(B, dtype=bool)
        leak = np.full(B, np.inf)
        for it in range(max_iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            Ha = H[idx]
            va = _reciprocal(Ha, u[idx])
            ua = _forward(Ha, va)
            la = _leakage(Ha, ua, va)
            u[idx], v[idx], leak[idx] = ua, va, la
            hist[idx, it] = la
            iters[idx] = it + 1
            active[idx] = la > leakage_tol
        result = IABatch(v, u, leak, iters, hist)
        if best is None:
            best = result
        else:
            better = result.leakage < best.leakage
            for name in ("precoders", "filters", "leakage", "iterations", "history"):
                getattr(best, name)[better] = getattr(result, name)[better]
    return best


@dataclass
class IASolution:
    """IA outcome for one user triple on one subcarrier pair."""

    precoders: np.ndarray  # (3, 2) unit-norm v_m
    filters: np.ndarray  # (3, 2) unit-norm row vectors u_m
    effective: np.ndarray  # (3, 3) complex u_m H_{j m} v_j, indexed [j, m]
    leakage: float
    iterations_used: int
    leakage_history: np.ndarray


def distributed_ia(
    channels,
    max_iters: int = 50,
    leakage_tol: float = 1e-8,
    n_starts: int = 1,
    seed=None,
) -> IASolution:
    """Distributed IA for a single instance.

    ``channels`` holds the diagonals ``(3, 3, 2)`` indexed [j, m] or the
    full ``(3, 3, 2, 2)`` diagonal matrices.
    """
    H = np.asarray(channels, dtype=complex)
    if H.shape == (N_CELLS, N_CELLS, 2, 2):
        H = np.stack([H[..., 0, 0], H[..., 1, 1]], axis=-1)
    if H.shape != (N_CELLS, N_CELLS, 2):
        raise ValueError(f"expected (3, 3, 2) diagonals, got {H.shape}")
    res = distributed_ia_batch(H[None], max_iters, leakage_tol, n_starts, seed)
    it = int(res.iterations[0])
    return IASolution(
        precoders=res.precoders[0],
        filters=res.filters[0],
        effective=res.effective_channel(H[None])[0],
        leakage=float(res.leakage[0]),
        iterations_used=it,
        leakage_history=res.history[0, :it].copy(),
    )


def effective_gains(precoders, filters, channels, noise_variance: float = 1.0):
    """Normalized effective power gains ``|u_m H_{j m} v_j|^2 / sigma^2``.

    Returns ``(direct, cross)`` where ``direct[m]`` is the own-link gain and
    ``cross[j, m]`` the residual gain from BS ``j`` to cell ``m`` (zero
    diagonal).  Works on a single instance or any leading batch shape.
    """
    v = np.asarray(precoders, dtype=complex)
    u = np.asarray(filters, dtype=complex)
    H = np.asarray(channels, dtype=complex)
    if H.shape[-2:] == (2, 2) and H.ndim >= 4:
        H = np.stack([H[..., 0, 0], H[..., 1, 1]], axis=-1)
    g = np.abs(np.einsum("...mc,...jmc,...jc->...jm", u, H, v)) ** 2 / noise_variance
    direct = np.diagonal(g, axis1=-2, axis2=-1).copy()
    cross = g.copy()
    idx = np.arange(N_CELLS)
    cross[..., idx, idx] = 0.0
    return direct, cross
