"""Time-varying spatially-correlated Rician channels with random LoS phase
and Jakes-type decorrelation across a resource block."""

from __future__ import annotations

import numpy as np

from cfrsma.config import SPEED_OF_LIGHT, SimConfig
from cfrsma.topology import Topology

# branch points of the J0 evaluation: power series below, fixed
# Gauss-Legendre quadrature of the cosine integral in the middle, Hankel
# asymptotic expansion beyond (machine precision for |x| >= 30)
_SERIES_CUT = 8.0
_ASYMPTOTIC_CUT = 30.0
_QUAD_NODES = 120

_gl_nodes, _gl_weights = np.polynomial.legendre.leggauss(_QUAD_NODES)
_SIN_THETA = np.sin(0.5 * np.pi * (_gl_nodes + 1.0))
_QUAD_W = 0.5 * _gl_weights


def _j0_series(x: np.ndarray) -> np.ndarray:
    q = 0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 40):
        term = term * (-q) / (k * k)
        total += term
    return total


def _j0_quadrature(x: np.ndarray) -> np.ndarray:
    # J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt
    return np.cos(x[..., None] * _SIN_THETA) @ _QUAD_W


def _j0_asymptotic(x: np.ndarray) -> np.ndarray:
    p = np.ones_like(x)
    q = np.zeros_like(x)
    c = np.ones_like(x)
    for m in range(1, 17):
        c = c * (2 * m - 1) ** 2 / (8.0 * m) / x
        if m % 2:
            q += (-1) ** ((m + 1) // 2) * c
        else:
            p += (-1) ** (m // 2) * c
    chi = x - 0.25 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (np.cos(chi) * p - np.sin(chi) * q)


def bessel_j0(x) -> np.ndarray | float:
    """Zeroth-order Bessel function of the first kind.

    Absolute error below 1e-12 for |x| <= 100 (power series for small
    arguments, quadrature of the cosine integral in the mid range, Hankel
    expansion beyond).
    """
    arr = np.abs(np.asarray(x, dtype=float))
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    small = arr < _SERIES_CUT
    large = arr >= _ASYMPTOTIC_CUT
    mid = ~small & ~large
    if small.any():
        out[small] = _j0_series(arr[small])
    if mid.any():
        out[mid] = _j0_quadrature(arr[mid])
    if large.any():
        out[large] = _j0_asymptotic(arr[large])
    return float(out[0]) if scalar else out


def temporal_corr(t, anchor, velocity_kmh, carrier_hz: float, sample_time_s: float):
    """Jakes correlation between the channel at instant t and at the anchor:
    J0(2 pi f_d T_s |t - anchor|) with f_d = v f_c / c."""
    gap = np.abs(np.asarray(t, dtype=float) - np.asarray(anchor, dtype=float))
    doppler = np.asarray(velocity_kmh, dtype=float) / 3.6 * carrier_hz / SPEED_OF_LIGHT
    return bessel_j0(2.0 * np.pi * doppler * sample_time_s * gap)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) i.i.d. entries (real/imaginary parts drawn interleaved)."""
    if isinstance(shape, int):
        shape = (shape,)
    flat = rng.standard_normal(tuple(shape) + (2,))
    return flat.view(np.complex128)[..., 0] * np.sqrt(0.5)


def sample_channel_grid(topology: Topology, rng: np.random.Generator,
                        shape_prefix: tuple = ()) -> np.ndarray:
    """Draw channels for every (AP, UE) pair: LoS mean with a fresh uniform
    phase plus the spatially-coloured diffuse part.

    Returns shape_prefix + (M, K, N).  Used both for the anchor instant and
    for the innovation at any other instant (identical distribution).
    """
    m, k, n = topology.M, topology.K, topology.N
    phase = rng.uniform(-np.pi, np.pi, size=shape_prefix + (m, k))
    g = complex_normal(rng, shape_prefix + (m, k, n))
    colored = np.einsum("mkab,...mkb->...mka", topology.r_sqrt, g)
    return topology.h_bar * np.exp(1j * phase)[..., None] + colored


class ChannelBlock:
    """All channels of one drop realization over a resource block.

    Holds the anchor-instant channels and lazily draws one independent
    innovation grid per queried instant; repeated queries of the same
    (m, k, t) are memoized and therefore bit-identical.
    """

    def __init__(self, topology: Topology, config: SimConfig, rng: np.random.Generator):
        self.topology = topology
        self.config = config
        self._rng = rng
        self.lam = config.lambda_instant
        self.tau_c = config.tau_c
        self.anchor = sample_channel_grid(topology, rng)
        self._innovations: dict[int, np.ndarray] = {}
        vel = np.asarray(config.velocities_kmh())
        ts = np.arange(1, config.tau_c + 1)
        # (tau_c, K) temporal correlation of each UE between instant t and anchor
        self.rho = temporal_corr(ts[:, None], self.lam, vel[None, :],
                                 config.carrier_hz, config.sample_time_s)
        self.rho_bar = np.sqrt(np.clip(1.0 - self.rho**2, 0.0, None))

    def rho_at(self, t: int) -> np.ndarray:
        """(K,) temporal correlation coefficients at instant t."""
        self._check_instant(t)
        return self.rho[t - 1]

    def innovation(self, t: int) -> np.ndarray:
        """(M, K, N) innovation grid of instant t (drawn once, memoized)."""
        self._check_instant(t)
        if t not in self._innovations:
            self._innovations[t] = sample_channel_grid(self.topology, self._rng)
        return self._innovations[t]

    def channel_at(self, m: int, k: int, t: int) -> np.ndarray:
        """Channel vector of pair (m, k) at instant t."""
        self._check_instant(t)
        if t == self.lam:
            return self.anchor[m, k]
        rho = self.rho[t - 1, k]
        return rho * self.anchor[m, k] + self.rho_bar[t - 1, k] * self.innovation(t)[m, k]

    def channel_grid_at(self, t: int) -> np.ndarray:
        """(M, K, N) channels of every pair at instant t."""
        self._check_instant(t)
        if t == self.lam:
            return self.anchor
        rho = self.rho[t - 1][None, :, None]
        rho_bar = self.rho_bar[t - 1][None, :, None]
        return rho * self.anchor + rho_bar * self.innovation(t)

    def _check_instant(self, t: int):
        if not 1 <= t <= self.tau_c:
            raise ValueError(f"instant {t} outside resource block 1..{self.tau_c}")
