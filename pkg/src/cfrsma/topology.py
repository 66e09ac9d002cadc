"""Random network drops: AP/UE placement on a wrap-around square, balanced
clustering, large-scale channel statistics and pilot assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfrsma.config import ConfigError, SimConfig

# eigenvalues of a correlation matrix below -PSD_TOL * N indicate a broken
# closed form rather than rounding; smaller negatives are clipped to zero
PSD_TOL = 1e-9

_KMEANS_MAX_ITER = 100


class TopologyError(RuntimeError):
    """Raised when a drop cannot satisfy the clustering/pilot constraints."""


@dataclass
class Topology:
    """One network drop: geometry, clusters, large-scale statistics, pilots.

    Immutable after construction; every per-drop simulation shares it
    read-only.  Correlation quantities are stored per (AP m, UE k):
    ``r_corr[m, k]`` is the N x N covariance of the diffuse component and
    ``h_bar[m, k]`` the deterministic line-of-sight mean vector (the random
    phase is applied at channel-sampling time).
    """

    ap_pos: np.ndarray            # (M, 2) [m]
    ue_pos: np.ndarray            # (K, 2) [m]
    cluster_of_ap: np.ndarray     # (M,) int
    cluster_of_ue: np.ndarray     # (K,) int
    beta: np.ndarray              # (M, K) linear path gain
    rician_k: np.ndarray          # (M, K) linear Rician factor
    r_corr: np.ndarray            # (M, K, N, N) complex PSD
    h_bar: np.ndarray             # (M, K, N) complex
    pilot_index: np.ndarray       # (K,) int slot in [0, tau_u)
    tau_u: int
    r_sqrt: np.ndarray = field(repr=False, default=None)  # (M, K, N, N) sqrt of r_corr

    @property
    def M(self) -> int:
        return self.ap_pos.shape[0]

    @property
    def K(self) -> int:
        return self.ue_pos.shape[0]

    @property
    def N(self) -> int:
        return self.h_bar.shape[2]

    @property
    def L(self) -> int:
        return int(self.cluster_of_ap.max()) + 1

    @property
    def r_bar(self) -> np.ndarray:
        """Total covariance of one channel: LoS outer product plus r_corr."""
        outer = self.h_bar[..., :, None] * self.h_bar[..., None, :].conj()
        return outer + self.r_corr

    def aps_of_cluster(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of_ap == l)

    def ues_of_cluster(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of_ue == l)

    def pilot_set(self, k: int) -> np.ndarray:
        """All UEs (across clusters) sharing UE k's pilot slot, k included."""
        return np.flatnonzero(self.pilot_index == self.pilot_index[k])

    @property
    def pilot_sets(self) -> list[np.ndarray]:
        return [self.pilot_set(k) for k in range(self.K)]


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

_WRAP_SHIFTS = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=float)


def wraparound_displacements(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Shortest displacement b - a on the torus, per (a_i, b_j) pair.

    Returns (len(a), len(b), 2); the minimising shifted copy of b is used,
    so the corresponding azimuth is wrap-consistent.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    diff = b[None, :, :] - a[:, None, :]                     # (A, B, 2)
    cand = diff[:, :, None, :] + side * _WRAP_SHIFTS[None, None, :, :]
    d2 = np.sum(cand**2, axis=-1)
    best = np.argmin(d2, axis=-1)
    return np.take_along_axis(cand, best[..., None, None], axis=2)[:, :, 0, :]


def wraparound_distance(a, b, side: float, height: float = 10.0) -> float:
    """Minimum distance over the 9 shifted copies of b, with the AP height
    offset added in quadrature."""
    disp = wraparound_displacements(np.asarray(a, float), np.asarray(b, float), side)
    return float(np.sqrt(np.sum(disp[0, 0] ** 2) + height**2))


def large_scale(distance_m, pl_const_db: float = -30.5, pl_slope_db: float = 36.7,
                ric_intercept: float = 0.0, ric_slope_per_m: float = 0.01):
    """Distance-based path gain and Rician factor (both linear).

    beta_dB = pl_const_db - pl_slope_db * log10(d),
    K = 10 ** (ric_intercept - ric_slope_per_m * d).
    """
    d = np.asarray(distance_m, dtype=float)
    beta = 10.0 ** ((pl_const_db - pl_slope_db * np.log10(d)) / 10.0)
    ric = 10.0 ** (ric_intercept - ric_slope_per_m * d)
    return beta, ric


# ---------------------------------------------------------------------------
# local scattering statistics
# ---------------------------------------------------------------------------

def los_steering(angle_rad: float, n_antennas: int) -> np.ndarray:
    """Half-wavelength ULA steering vector, unit-modulus entries."""
    idx = np.arange(n_antennas)
    return np.exp(1j * np.pi * idx * np.sin(angle_rad))


def spatial_correlation(angle_rad, asd_deg: float, n_antennas: int) -> np.ndarray:
    """Normalized Gaussian local-scattering correlation for a half-wavelength
    ULA: entry (a, b) = exp(j pi (a-b) sin t) exp(-(s pi (a-b) cos t)^2 / 2)
    with s the angular spread in radians.  Unit diagonal; PSD up to rounding.
    """
    theta = np.asarray(angle_rad, dtype=float)
    sigma_phi = np.deg2rad(asd_deg)
    idx = np.arange(n_antennas)
    gap = idx[..., :, None] - idx[..., None, :]                    # (N, N)
    gap = np.broadcast_to(gap, theta.shape + (n_antennas, n_antennas))
    st = np.sin(theta)[..., None, None]
    ct = np.cos(theta)[..., None, None]
    return np.exp(1j * np.pi * gap * st) * np.exp(-0.5 * (sigma_phi * np.pi * gap * ct) ** 2)


def repair_psd(mat: np.ndarray, n_antennas: int) -> np.ndarray:
    """Clip tiny negative eigenvalues of Hermitian matrices; reject matrices
    that are indefinite beyond rounding noise."""
    w, v = np.linalg.eigh(mat)
    if w.min() < -PSD_TOL * n_antennas:
        raise TopologyError(
            f"correlation matrix indefinite: min eigenvalue {w.min():.3e}"
        )
    if w.min() >= 0.0:
        return mat
    w = np.clip(w, 0.0, None)
    return np.einsum("...ab,...b,...cb->...ac", v, w, v.conj())


# ---------------------------------------------------------------------------
# clustering and pilots
# ---------------------------------------------------------------------------

def _balanced_kmeans(ue_pos: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means on UE positions with cluster sizes constrained to floor/ceil
    of K / L.  Farthest-point initialisation from the drop RNG; greedy
    capacity-respecting assignment keeps the result deterministic."""
    n_ues = ue_pos.shape[0]
    base, extra = divmod(n_ues, n_clusters)
    capacity = np.full(n_clusters, base, dtype=int)
    capacity[:extra] += 1

    centers = np.empty((n_clusters, 2))
    first = int(rng.integers(n_ues))
    centers[0] = ue_pos[first]
    mind = np.sum((ue_pos - centers[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        centers[c] = ue_pos[int(np.argmax(mind))]
        mind = np.minimum(mind, np.sum((ue_pos - centers[c]) ** 2, axis=1))

    assign = np.full(n_ues, -1, dtype=int)
    for _ in range(_KMEANS_MAX_ITER):
        d2 = np.sum((ue_pos[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        order = np.argsort(d2, axis=None, kind="stable")
        new_assign = np.full(n_ues, -1, dtype=int)
        load = np.zeros(n_clusters, dtype=int)
        placed = 0
        for flat in order:
            k, c = divmod(int(flat), n_clusters)
            if new_assign[k] >= 0 or load[c] >= capacity[c]:
                continue
            new_assign[k] = c
            load[c] += 1
            placed += 1
            if placed == n_ues:
                break
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(n_clusters):
            centers[c] = ue_pos[assign == c].mean(axis=0)
    return assign


def cluster_network(ap_pos: np.ndarray, ue_pos: np.ndarray, n_clusters: int,
                    rng: np.random.Generator, beta: np.ndarray):
    """Disjoint AP/UE clusters decided ahead of transmission.

    UEs: balanced k-means on positions (sizes within +/-1).  APs: each AP
    joins the cluster whose UEs it reaches with the largest summed path
    gain; clusters left without APs steal the best-fitting AP from a
    cluster that can spare one.
    """
    n_aps, n_ues = beta.shape
    if n_clusters > min(n_aps, n_ues):
        raise TopologyError(f"cannot form {n_clusters} clusters from {n_aps} APs / {n_ues} UEs")
    cluster_of_ue = _balanced_kmeans(ue_pos, n_clusters, rng)

    ue_mask = cluster_of_ue[None, :] == np.arange(n_clusters)[:, None]   # (L, K)
    affinity = beta @ ue_mask.T                                          # (M, L)
    cluster_of_ap = np.argmax(affinity, axis=1).astype(int)

    counts = np.bincount(cluster_of_ap, minlength=n_clusters)
    while (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        donors = np.flatnonzero(counts[cluster_of_ap] >= 2)
        if donors.size == 0:
            raise TopologyError(f"cluster {empty} has no AP and no donor is available")
        best = donors[int(np.argmax(affinity[donors, empty]))]
        cluster_of_ap[best] = empty
        counts = np.bincount(cluster_of_ap, minlength=n_clusters)
    return cluster_of_ap, cluster_of_ue


def assign_pilots(cluster_of_ue: np.ndarray, tau_u: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal pilots within each cluster, slots reused across clusters.

    Each cluster shuffles its UEs (drop RNG) and maps them onto slots
    0..size-1, so slot s collects at most one UE per cluster.
    """
    n_clusters = int(cluster_of_ue.max()) + 1
    pilot_index = np.full(cluster_of_ue.shape[0], -1, dtype=int)
    for l in range(n_clusters):
        members = np.flatnonzero(cluster_of_ue == l)
        if members.size > tau_u:
            raise TopologyError(
                f"cluster {l} holds {members.size} UEs but only tau_u={tau_u} "
                "orthogonal pilot slots exist"
            )
        perm = rng.permutation(members.size)
        pilot_index[members[perm]] = np.arange(members.size)
    return pilot_index


# ---------------------------------------------------------------------------
# drop generation
# ---------------------------------------------------------------------------

def hermitian_sqrt(mat: np.ndarray, n_antennas: int) -> np.ndarray:
    """Principal square root of Hermitian PSD matrices via eigendecomposition,
    clipping rounding-level negative eigenvalues at zero."""
    w, v = np.linalg.eigh(mat)
    if w.min() < -PSD_TOL * n_antennas:
        raise TopologyError(f"matrix not PSD: min eigenvalue {w.min():.3e}")
    w = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("...ab,...b,...cb->...ac", v, w, v.conj())


def drop_network(config: SimConfig, rng: np.random.Generator) -> Topology:
    """Generate one random drop: positions, clusters, statistics, pilots.

    Deterministic given (config, rng state).  RNG draw order: AP positions,
    UE positions, clustering initialisation, per-cluster pilot shuffles.
    """
    cfg = config
    if cfg.tau_u is None:
        raise ConfigError("config not resolved (tau_u missing); call resolve()")
    ap_pos = rng.uniform(0.0, cfg.area_side, size=(cfg.M, 2))
    ue_pos = rng.uniform(0.0, cfg.area_side, size=(cfg.K, 2))

    disp = wraparound_displacements(ap_pos, ue_pos, cfg.area_side)       # (M, K, 2)
    dist = np.sqrt(np.sum(disp**2, axis=-1) + cfg.ap_height**2)
    beta, rician_k = large_scale(dist, cfg.pl_const_db, cfg.pl_slope_db,
                                 cfg.ric_intercept, cfg.ric_slope_per_m)

    cluster_of_ap, cluster_of_ue = cluster_network(ap_pos, ue_pos, cfg.L, rng, beta)
    sizes = np.bincount(cluster_of_ue, minlength=cfg.L)
    if sizes.max() > cfg.tau_u:
        raise ConfigError(
            f"pilot capacity violated: largest cluster holds {sizes.max()} UEs "
            f"> tau_u={cfg.tau_u}"
        )
    pilot_index = assign_pilots(cluster_of_ue, cfg.tau_u, rng)

    angles = np.arctan2(disp[..., 1], disp[..., 0])                      # (M, K)
    corr = repair_psd(spatial_correlation(angles, cfg.asd_deg, cfg.N), cfg.N)
    nlos_gain = beta / (1.0 + rician_k)
    los_gain = np.sqrt(rician_k * nlos_gain)
    idx = np.arange(cfg.N)
    steer = np.exp(1j * np.pi * idx[None, None, :] * np.sin(angles)[..., None])
    h_bar = los_gain[..., None] * steer
    r_corr = nlos_gain[..., None, None] * corr

    return Topology(
        ap_pos=ap_pos,
        ue_pos=ue_pos,
        cluster_of_ap=cluster_of_ap,
        cluster_of_ue=cluster_of_ue,
        beta=beta,
        rician_k=rician_k,
        r_corr=r_corr,
        h_bar=h_bar,
        pilot_index=pilot_index,
        tau_u=cfg.tau_u,
        r_sqrt=hermitian_sqrt(r_corr, cfg.N),
    )
