"""Monte Carlo covariance oracle for the closed-form DL channel statistics.

Samples the full training chain (UL pilots -> estimates -> precoders ->
effective channels -> DL pilot observations) directly from its defining
equations for one fixed topology, and estimates every first/second moment
that :mod:`cfrsma.dl_estimation` produces in closed form.  The sampling
route is deliberately written from the definitions rather than through the
simulation engine so the two paths stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfrsma.channel import complex_normal, sample_channel_grid
from cfrsma.config import Mode, SimConfig
from cfrsma.dl_estimation import DlStats, dl_pilot_rho, dl_stats_for_config
from cfrsma.precoding import normalization_factors, power_split
from cfrsma.topology import Topology, drop_network
from cfrsma.ul_estimation import UlStats, compute_ul_stats


@dataclass
class McStats:
    """Sample-moment estimates mirroring the closed-form quantities."""

    n_samples: int
    r_hat_ul: np.ndarray            # (M, K, N, N) E[h_hat h_hat^H]
    ul_cross: np.ndarray            # (M, K, N, N) E[h_hat (h - h_hat)^H]
    norm_private: np.ndarray        # (M, K) E[||v_p||^2] (should be 1)
    norm_common: np.ndarray         # (M,)  E[||v_c||^2] (should be 1)
    common_mean: np.ndarray         # (L, K) complex
    common_var: np.ndarray          # (L, K)
    common_obs_gain: np.ndarray     # (L, K) complex cov(y, a)
    common_obs_var: np.ndarray      # (L, K)
    common_est_var: np.ndarray      # (L, K) E|a_hat - mean|^2
    common_mse: np.ndarray          # (L, K) E|a - a_hat|^2
    common_orth: np.ndarray         # (L, K) complex E[a_hat (a - a_hat)*]
    private_mean_by_cluster: np.ndarray  # (L, K) complex
    private_var: np.ndarray         # (K,)
    private_obs_mean: np.ndarray    # (K,) complex
    private_obs_gain: np.ndarray    # (K,) complex
    private_obs_var: np.ndarray     # (K,)
    private_est_var: np.ndarray     # (K,)
    private_mse: np.ndarray         # (K,)
    private_orth: np.ndarray        # (K,) complex


def _effective_at(topology: Topology, h_grid: np.ndarray, v_private: np.ndarray,
                  v_common: np.ndarray, p_common: np.ndarray, p_private: np.ndarray):
    """Effective channels of every pair from an explicit channel grid.

    Returns (a_common (B, L, K), a_private (B, K, K)); a_private[:, k, i] is
    stream i (transmitted by its own cluster) seen at UE k.
    """
    n_clusters = int(topology.cluster_of_ap.max()) + 1
    batch, _, n_ues, _ = h_grid.shape
    a_c = np.zeros((batch, n_clusters, n_ues), dtype=complex)
    a_p = np.zeros((batch, n_ues, n_ues), dtype=complex)
    for l in range(n_clusters):
        aps = topology.aps_of_cluster(l)
        hc = h_grid[:, aps].conj()                       # (B, |A|, K, N)
        a_c[:, l] = np.sqrt(p_common[l]) * np.einsum("bmkn,bmn->bk", hc, v_common[:, aps])
        for i in topology.ues_of_cluster(l):
            a_p[:, :, i] = np.sqrt(p_private[i]) * np.einsum(
                "bmkn,bmn->bk", hc, v_private[:, aps, i])
    return a_c, a_p


class _Moments:
    """Streaming first/second moment accumulator for complex samples."""

    def __init__(self, shape):
        self.n = 0
        self.s1 = np.zeros(shape, dtype=complex)
        self.s2 = np.zeros(shape)

    def add(self, x: np.ndarray):
        self.n += x.shape[0]
        self.s1 += x.sum(axis=0)
        self.s2 += (np.abs(x) ** 2).sum(axis=0)

    @property
    def mean(self):
        return self.s1 / self.n

    @property
    def var(self):
        return self.s2 / self.n - np.abs(self.mean) ** 2


class _Cross:
    """Streaming accumulator of E[x y*]."""

    def __init__(self, shape):
        self.n = 0
        self.s = np.zeros(shape, dtype=complex)

    def add(self, x, y):
        self.n += x.shape[0]
        self.s += (x * y.conj()).sum(axis=0)

    @property
    def mean(self):
        return self.s / self.n


def estimate_dl_statistics_mc(topology: Topology, config: SimConfig,
                              stats: DlStats, n_drops: int = 100_000,
                              batch: int = 2_000,
                              seed: int = 0) -> McStats:
    """Sample the training chain n_drops times and return moment estimates.

    The estimator outputs (a_hat) use the closed-form coefficients under
    test, so their estimated error variance and orthogonality validate the
    whole chain end to end.

    Variance reduction (every estimator stays unbiased):
    * means are accumulated from same-slot estimate products
      h_hat_mk^H h_hat_mi: the dropped estimation-error term is exactly
      uncorrelated with every (linear-in-observation) precoder component,
      and estimate products across different pilot slots have exactly zero
      conditional mean, so both drop without bias while carrying nearly all
      of the sampling noise;
    * the private observation gain correlates the own effective channel with
      the conditional mean of the observation given the anchor-instant
      variables (innovation and receiver noise integrate to zero exactly).
    """
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA11CE,)))
    m_aps, k_ues, n_ant = topology.M, topology.K, topology.N
    n_clusters = topology.L
    ulstats = compute_ul_stats(topology, cfg)
    eta_private, eta_common = normalization_factors(topology, ulstats)
    sizes = np.bincount(topology.cluster_of_ue, minlength=n_clusters)
    p_common = np.empty(n_clusters)
    p_private = np.empty(k_ues)
    for l in range(n_clusters):
        pc, pp = power_split(cfg.t_m, cfg.p_max_w, int(sizes[l]))
        p_common[l] = pc
        p_private[topology.cluster_of_ue == l] = pp
    if cfg.mode is Mode.RSMA_NO_DL_PILOTS:
        raise ValueError("the covariance oracle needs the DL training phases")
    rho_c, rho_p = dl_pilot_rho(topology, cfg)
    rho_ul = ulstats.rho_ul
    rhob_ul = np.sqrt(np.clip(1.0 - rho_ul**2, 0.0, None))
    p_u = cfg.ul_pilot_w
    sigma = np.sqrt(cfg.noise_w)
    same_cluster = (topology.cluster_of_ap[:, None] == topology.cluster_of_ue[None, :])
    share = topology.pilot_index[:, None] == topology.pilot_index[None, :]

    sum_rhat = np.zeros((m_aps, k_ues, n_ant, n_ant), dtype=complex)
    sum_cross_ul = np.zeros_like(sum_rhat)
    norm_p = _Moments((m_aps, k_ues))
    norm_c = _Moments((m_aps,))
    mom_ac = _Moments((n_clusters, k_ues))
    mom_ac_rb = _Moments((n_clusters, k_ues))       # reduced-variance mean route
    mom_yc = _Moments((n_clusters, k_ues))
    cross_yc_ac = _Cross((n_clusters, k_ues))
    mom_ahat_c = _Moments((n_clusters, k_ues))
    mom_err_c = _Moments((n_clusters, k_ues))
    cross_orth_c = _Cross((n_clusters, k_ues))
    mom_ap_cluster_rb = _Moments((n_clusters, k_ues))
    mom_ap_own = _Moments((k_ues,))
    mom_yp = _Moments((k_ues,))
    mom_yp_cond = _Moments((k_ues,))                # E[y_p | anchor-instant vars]
    cross_yp_ap = _Cross((k_ues,))
    mom_ahat_p = _Moments((k_ues,))
    mom_err_p = _Moments((k_ues,))
    cross_orth_p = _Cross((k_ues,))

    own_cluster = topology.cluster_of_ue
    ue_idx = np.arange(k_ues)
    done = 0
    while done < n_drops:
        b = min(batch, n_drops - done)
        anchors = sample_channel_grid(topology, rng, (b,))
        f_ul = sample_channel_grid(topology, rng, (b,))
        h_pilot = rho_ul[None, None, :, None] * anchors + rhob_ul[None, None, :, None] * f_ul
        y_ul = np.zeros((b, m_aps, topology.tau_u, n_ant), dtype=complex)
        for s in range(topology.tau_u):
            members = np.flatnonzero(topology.pilot_index == s)
            y_ul[:, :, s] = np.sqrt(p_u) * h_pilot[:, :, members].sum(axis=2)
        y_ul += sigma * complex_normal(rng, y_ul.shape)
        h_hat = np.einsum("mkxy,bmky->bmkx", ulstats.gain,
                          y_ul[:, :, topology.pilot_index])

        sum_rhat += np.einsum("bmkx,bmky->mkxy", h_hat, h_hat.conj())
        sum_cross_ul += np.einsum("bmkx,bmky->mkxy", h_hat, (anchors - h_hat).conj())

        v_p = np.sqrt(eta_private)[None, :, :, None] * h_hat * same_cluster[None, :, :, None]
        v_c = np.sqrt(eta_common)[None, :, None] * np.einsum(
            "mk,bmkn->bmn", same_cluster.astype(float), h_hat)
        norm_p.add(np.sum(np.abs(v_p) ** 2, axis=3))
        norm_c.add(np.sum(np.abs(v_c) ** 2, axis=2))

        a_c_lam, a_p_lam = _effective_at(topology, anchors, v_p, v_c,
                                         p_common, p_private)
        mom_ac.add(a_c_lam)
        mom_ap_own.add(a_p_lam[:, ue_idx, ue_idx])

        # reduced-variance mean samples: same-slot estimate products only
        ue_onehot = _cluster_onehot(topology)
        ap_onehot = (topology.cluster_of_ap[None, :]
                     == np.arange(n_clusters)[:, None]).astype(float)
        est_prod = np.einsum("bmkn,bmin->bmki", h_hat.conj(), h_hat)
        wc = np.sqrt(p_common[:, None] * eta_common[None, :]) * ap_onehot
        mom_ac_rb.add(np.einsum("lm,bmki,li,ki->blk", wc, est_prod,
                                ue_onehot, share, optimize=True))
        wp = np.sqrt(p_private[None, :] * eta_private) * same_cluster
        mom_ap_cluster_rb.add(np.einsum("lm,li,ki,mi,bmki->blk", ap_onehot,
                                        ue_onehot, share, wp, est_prod,
                                        optimize=True))

        # common training: one fresh innovation grid per cluster instant
        y_c = np.empty((b, n_clusters, k_ues), dtype=complex)
        a_c_t = np.empty_like(y_c)
        for l in range(n_clusters):
            f = sample_channel_grid(topology, rng, (b,))
            h_t = rho_c[l][None, None, :, None] * anchors \
                + np.sqrt(1.0 - rho_c[l][None, None, :, None] ** 2) * f
            ac_t, _ = _effective_at(topology, h_t, v_p, v_c, p_common, p_private)
            a_c_t[:, l] = ac_t[:, l]
        y_c = a_c_t + sigma * complex_normal(rng, a_c_t.shape)
        mom_yc.add(y_c)
        cross_yc_ac.add(y_c, a_c_lam)
        coef_c = stats.common_obs_gain / stats.common_obs_var
        a_hat_c = stats.common_mean + coef_c * (y_c - stats.rho_common * stats.common_mean)
        mom_ahat_c.add(a_hat_c - stats.common_mean)
        mom_err_c.add(a_c_lam - a_hat_c)
        cross_orth_c.add(a_hat_c, a_c_lam - a_hat_c)

        # private training: fresh innovations at each UE's own pilot instant
        f = sample_channel_grid(topology, rng, (b,))
        h_t = rho_p[None, None, :, None] * anchors \
            + np.sqrt(1.0 - rho_p[None, None, :, None] ** 2) * f
        _, a_p_t = _effective_at(topology, h_t, v_p, v_c, p_common, p_private)
        y_p = np.where(share[None, :, :], a_p_t, 0.0).sum(axis=2)
        y_p += sigma * complex_normal(rng, y_p.shape)
        mom_yp.add(y_p)
        own_a = a_p_lam[:, ue_idx, ue_idx]
        # conditional mean of y_p given the anchor-instant variables:
        # innovation and noise components integrate to zero
        y_p_cond = rho_p[None, :] * np.where(share[None, :, :], a_p_lam, 0.0).sum(axis=2)
        mom_yp_cond.add(y_p_cond)
        cross_yp_ap.add(y_p_cond, own_a)
        coef_p = stats.private_obs_gain / stats.private_obs_var
        a_hat_p = stats.private_mean + coef_p * (y_p - stats.private_obs_mean)
        mom_ahat_p.add(a_hat_p - stats.private_mean)
        mom_err_p.add(own_a - a_hat_p)
        cross_orth_p.add(a_hat_p, own_a - a_hat_p)
        done += b

    n = done
    theta_c_mc = cross_yc_ac.mean - mom_yc.mean * mom_ac.mean.conj()
    theta_p_mc = cross_yp_ap.mean - mom_yp_cond.mean * mom_ap_own.mean.conj()
    return McStats(
        n_samples=n,
        r_hat_ul=sum_rhat / n,
        ul_cross=sum_cross_ul / n,
        norm_private=norm_p.mean.real,
        norm_common=norm_c.mean.real,
        common_mean=mom_ac_rb.mean,
        common_var=mom_ac.var,
        common_obs_gain=theta_c_mc,
        common_obs_var=mom_yc.var,
        common_est_var=mom_ahat_c.var + np.abs(mom_ahat_c.mean) ** 2,
        common_mse=mom_err_c.var + np.abs(mom_err_c.mean) ** 2,
        common_orth=cross_orth_c.mean,
        private_mean_by_cluster=mom_ap_cluster_rb.mean,
        private_var=mom_ap_own.var,
        private_obs_mean=mom_yp_cond.mean,
        private_obs_gain=theta_p_mc,
        private_obs_var=mom_yp.var,
        private_est_var=mom_ahat_p.var + np.abs(mom_ahat_p.mean) ** 2,
        private_mse=mom_err_p.var + np.abs(mom_err_p.mean) ** 2,
        private_orth=cross_orth_p.mean,
    )


def _cluster_onehot(topology: Topology) -> np.ndarray:
    n_clusters = int(topology.cluster_of_ap.max()) + 1
    return (topology.cluster_of_ue[None, :] == np.arange(n_clusters)[:, None]).astype(float)


@dataclass
class ComparisonRow:
    name: str
    closed: complex
    mc: complex
    rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.rel_err <= self.tol

    def __str__(self) -> str:
        flag = "ok " if self.ok else "FAIL"
        return (f"[{flag}] {self.name}: closed={self.closed:.6g} mc={self.mc:.6g} "
                f"rel_err={self.rel_err:.4f} (tol {self.tol:.2f})")


def _compare_family(name: str, closed: np.ndarray, mc: np.ndarray,
                    tol: float, tol_small: float) -> list[ComparisonRow]:
    closed = np.atleast_1d(closed)
    mc = np.atleast_1d(mc)
    dominant = np.max(np.abs(closed))
    rows = []
    for idx in np.ndindex(closed.shape):
        c = closed[idx]
        m = mc[idx]
        small = np.abs(c) < 0.01 * dominant
        denom = max(np.abs(c), 0.01 * dominant)
        err = abs(c - m) / denom if denom > 0 else abs(c - m)
        label = name + "".join(f"[{i}]" for i in idx)
        rows.append(ComparisonRow(label, c, m, float(err), tol_small if small else tol))
    return rows


def compare_closed_vs_mc(topology: Topology, config: SimConfig,
                         n_drops: int = 100_000, batch: int = 2_000,
                         seed: int = 0, tol: float = 0.02,
                         tol_small: float = 0.05):
    """Compare every closed-form statistic against its Monte Carlo estimate.

    Returns (rows, mc_stats, dl_stats); each row carries the relative error
    against the closed value (floored at 1% of the family's dominant
    magnitude so near-zero entries are judged on the family scale).
    """
    ulstats = compute_ul_stats(topology, config)
    stats = dl_stats_for_config(topology, ulstats, config)
    mc = estimate_dl_statistics_mc(topology, config, stats, n_drops=n_drops,
                                   batch=batch, seed=seed)
    rows: list[ComparisonRow] = []
    rows += _compare_family("r_hat_ul", ulstats.r_hat, mc.r_hat_ul, tol, tol_small)
    rows += _compare_family("norm_private",
                            np.where((topology.cluster_of_ap[:, None]
                                      == topology.cluster_of_ue[None, :]), 1.0, 0.0),
                            mc.norm_private, tol, tol_small)
    rows += _compare_family("norm_common", np.ones(topology.M), mc.norm_common,
                            tol, tol_small)
    rows += _compare_family("common_mean", stats.common_mean, mc.common_mean, tol, tol_small)
    rows += _compare_family("common_var", stats.common_var, mc.common_var, tol, tol_small)
    rows += _compare_family("common_obs_gain", stats.common_obs_gain + 0j,
                            mc.common_obs_gain, tol, tol_small)
    rows += _compare_family("common_obs_var", stats.common_obs_var, mc.common_obs_var,
                            tol, tol_small)
    rows += _compare_family("common_est_var", stats.common_est_var, mc.common_est_var,
                            tol, tol_small)
    rows += _compare_family("common_mse", stats.common_mse, mc.common_mse, tol, tol_small)
    rows += _compare_family("private_mean", stats.private_mean_by_cluster,
                            mc.private_mean_by_cluster, tol, tol_small)
    rows += _compare_family("private_var", stats.private_var, mc.private_var, tol, tol_small)
    rows += _compare_family("private_obs_mean", stats.private_obs_mean,
                            mc.private_obs_mean, tol, tol_small)
    rows += _compare_family("private_obs_gain", stats.private_obs_gain + 0j,
                            mc.private_obs_gain, tol, tol_small)
    rows += _compare_family("private_obs_var", stats.private_obs_var,
                            mc.private_obs_var, tol, tol_small)
    rows += _compare_family("private_est_var", stats.private_est_var,
                            mc.private_est_var, tol, tol_small)
    rows += _compare_family("private_mse", stats.private_mse, mc.private_mse,
                            tol, tol_small)
    return rows, mc, stats


def oracle_instance_config(**overrides) -> SimConfig:
    """Small reference instance used by the built-in statistics self-check."""
    base = dict(M=4, N=2, K=4, L=2, tau_c=40, velocity_kmh=40.0,
                drops=1, realizations=1, seed=7)
    base.update(overrides)
    return SimConfig(**base).resolve()


def run_statistics_selfcheck(n_drops: int = 100_000, seed: int = 0,
                             config: SimConfig | None = None):
    """Build the reference instance and compare closed forms to the oracle.

    Returns (ok, rows, topology).
    """
    cfg = config if config is not None else oracle_instance_config()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    topo = drop_network(cfg, rng)
    rows, _, _ = compare_closed_vs_mc(topo, cfg, n_drops=n_drops, seed=seed)
    return all(r.ok for r in rows), rows, topo
