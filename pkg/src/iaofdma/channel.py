"""Channel generation for the three-cell downlink.

Gains are stored as a complex array ``h[j, m, k, n]``: the response from
the BS of cell ``j`` to user ``k`` of cell ``m`` on subcarrier ``n``.
All indices are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CELLS = 3

CIR = "CIR"
CNIR = "CNIR"


@dataclass(frozen=True)
class SystemDims:
    n_subcarriers: int
    users_per_cell: int
    noise_variance: float = 1.0
    power_budget: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_cells: int = N_CELLS

    def __post_init__(self):
        if self.n_cells != N_CELLS:
            raise ValueError("only three cells are supported")
        if self.n_subcarriers <= 0 or self.n_subcarriers % 2:
            raise ValueError(f"n_subcarriers must be a positive even integer, got {self.n_subcarriers}")
        if self.users_per_cell < 1:
            raise ValueError("users_per_cell must be >= 1")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be > 0")
        budget = tuple(float(p) for p in self.power_budget)
        if len(budget) != N_CELLS or any(p < 0 for p in budget):
            raise ValueError("power_budget must be three nonnegative values")
        object.__setattr__(self, "power_budget", budget)

    def with_budget(self, budget) -> "SystemDims":
        if np.isscalar(budget):
            budget = (budget,) * N_CELLS
        return SystemDims(self.n_subcarriers, self.users_per_cell, self.noise_variance, tuple(budget))


@dataclass
class ChannelTensor:
    """Complex gains ``h[j, m, k, n]`` together with the system dimensions."""

    gains: np.ndarray
    dims: SystemDims

    def __post_init__(self):
        expected = (N_CELLS, N_CELLS, self.dims.users_per_cell, self.dims.n_subcarriers)
        if self.gains.shape != expected:
            raise ValueError(f"gains shape {self.gains.shape} != {expected}")
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("channel gains must be finite")

    def power_gains(self) -> np.ndarray:
        """Noise-normalized power gains ``|h|^2 / sigma^2`` with the same layout."""
        return np.abs(self.gains) ** 2 / self.dims.noise_variance

    def with_budget(self, budget) -> "ChannelTensor":
        return ChannelTensor(self.gains, self.dims.with_budget(budget))


@dataclass
class UserLayout:
    bs_positions: np.ndarray  # (3, 2)
    user_positions: np.ndarray  # (3, K, 2)
    cell_radius: float
    region_labels: np.ndarray = field(default=None)  # (3, K) of CIR/CNIR

    def distances(self) -> np.ndarray:
        """Distances ``d[j, m, k]`` from BS ``j`` to user ``k`` of cell ``m``."""
        diff = self.user_positions[None, :, :, :] - self.bs_positions[:, None, None, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def centroid(self) -> np.ndarray:
        return self.bs_positions.mean(axis=0)

    def cir_mask(self) -> np.ndarray:
        return self.region_labels == CIR


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Per-trial substream seed; depends only on (master_seed, trial_index)."""
    state = np.random.SeedSequence([int(master_seed), int(trial_index)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _cscg(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian samples."""
    re, im = rng.standard_normal((2, *shape))
    return (re + 1j * im) / np.sqrt(2.0)


def gen_symmetric_channels(dims: SystemDims, cross_gain: float, seed) -> ChannelTensor:
    """Direct links ~ CN(0, 1), cross links ~ CN(0, cross_gain), i.i.d. over users and subcarriers."""
    if cross_gain < 0:
        raise ValueError("cross_gain must be >= 0")
    rng = make_rng(seed)
    shape = (N_CELLS, N_CELLS, dims.users_per_cell, dims.n_subcarriers)
    w = _cscg(rng, shape)
    std = np.full((N_CELLS, N_CELLS), np.sqrt(cross_gain))
    np.fill_diagonal(std, 1.0)
    return ChannelTensor(w * std[:, :, None, None], dims)


def bs_triangle(inter_site_distance: float) -> np.ndarray:
    """BS coordinates on an equilateral triangle of side D, centroid at the origin."""
    r = inter_site_distance / np.sqrt(3.0)
    angles = np.pi / 2 + 2 * np.pi * np.arange(N_CELLS) / N_CELLS
    return np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)


def gen_heterogeneous_channels(
    dims: SystemDims,
    cell_radius: float = 1.0,
    inter_site_distance: float | None = None,
    pathloss_exponent: float = 2.0,
    seed=0,
    cir_radius_fraction: float = 0.5,
) -> tuple[ChannelTensor, UserLayout]:
    """Drop users uniformly in their serving discs and draw path-loss scaled Rayleigh gains.

    ``h[j, m, k, n] = d[j, m, k] ** (-alpha / 2) * w`` with ``w ~ CN(0, 1)``.
    ``inter_site_distance`` defaults to ``1.2 * cell_radius``.
    """
    if inter_site_distance is None:
        inter_site_distance = 1.2 * cell_radius
    if cell_radius <= 0 or inter_site_distance <= 0:
        raise ValueError("cell_radius and inter_site_distance must be > 0")
    if pathloss_exponent < 0:
        raise ValueError("pathloss_exponent must be >= 0")
    rng = make_rng(seed)
    K = dims.users_per_cell
    bs = bs_triangle(inter_site_distance)
    radius = cell_radius * np.sqrt(rng.random((N_CELLS, K)))
    theta = 2 * np.pi * rng.random((N_CELLS, K))
    users = bs[:, None, :] + np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=-1)
    layout = UserLayout(bs, users, float(cell_radius))
    layout.region_labels = classify_regions(layout, cir_radius_fraction)
    return pathloss_channels(layout, dims, pathloss_exponent, rng), layout


def pathloss_channels(layout: UserLayout, dims: SystemDims, pathloss_exponent: float, seed) -> ChannelTensor:
    """Rayleigh gains scaled by ``d ** (-alpha / 2)`` for a given user layout."""
    rng = make_rng(seed)
    w = _cscg(rng, (N_CELLS, N_CELLS, dims.users_per_cell, dims.n_subcarriers))
    atten = layout.distances() ** (-pathloss_exponent / 2.0)
    return ChannelTensor(w * atten[..., None], dims)


def classify_regions(layout: UserLayout, cir_radius_fraction: float = 0.5) -> np.ndarray:
    """Label a user CIR when it lies within ``rho * R`` of the BS centroid, CNIR otherwise."""
    if not 0 <= cir_radius_fraction <= 1:
        raise ValueError("cir_radius_fraction must lie in [0, 1]")
    d = np.linalg.norm(layout.user_positions - layout.centroid(), axis=-1)
    inside = d <= cir_radius_fraction * layout.cell_radius
    if cir_radius_fraction == 0:
        inside[:] = False
    return np.where(inside, CIR, CNIR)
