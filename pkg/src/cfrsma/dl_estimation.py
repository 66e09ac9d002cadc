"""Downlink training: closed-form statistics of the effective channels seen
by each UE and the scalar LMMSE estimators driven by precoded DL pilots.

The effective channel a = sum_m h_mk^H v_m couples the UE's channel with the
precoders, which are themselves built from contaminated UL pilot
observations.  Every first/second moment needed by the estimators therefore
reduces to moments of the elementary scalars g = h_mk[anchor]^H h_hat_mi,
which this module evaluates in closed form per (AP, UE, UE) triple.  The
Monte Carlo covariance oracle in :mod:`cfrsma.oracle` cross-checks every
quantity produced here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cfrsma.channel import ChannelBlock, complex_normal, temporal_corr
from cfrsma.config import Mode, SimConfig
from cfrsma.precoding import PrecoderSet
from cfrsma.topology import Topology
from cfrsma.ul_estimation import UlStats


class StatisticsError(RuntimeError):
    """Raised when a closed-form statistic comes out structurally broken."""


@dataclass
class PairStats:
    """Moments of the elementary scalars g_i = h_k[anchor]^H h_hat_i at one AP.

    mean[m, k, i]      : E[g]; nonzero only when UE i shares UE k's pilot slot
    var[m, k, i]       : Var(g)
    aging_gram[m, k, i]: E[h_hat_i^H R_bar_k h_hat_i], the variance transferred
                         into the effective channel by a fresh innovation
    """

    mean: np.ndarray   # (M, K, K) complex
    var: np.ndarray    # (M, K, K) real
    aging_gram: np.ndarray  # (M, K, K) real


@dataclass
class DlStats:
    """Closed-form LMMSE statistics of the effective DL channels of a drop.

    Common quantities are per (transmit cluster l, UE k); private quantities
    per UE (own stream).  obs_gain / obs_var are the cross-covariance with
    and variance of the pilot observation; est_var = obs_gain^2 / obs_var is
    the variance removed by the estimator and mse the residual.
    """

    rho_common: np.ndarray       # (L, K) UE correlation at cluster pilots
    rho_private: np.ndarray      # (K,)  UE correlation at its private pilot
    common_mean: np.ndarray      # (L, K) complex
    common_var: np.ndarray       # (L, K)
    common_aging_var: np.ndarray  # (L, K)
    common_obs_gain: np.ndarray  # (L, K)
    common_obs_var: np.ndarray   # (L, K)
    common_est_var: np.ndarray   # (L, K)
    common_mse: np.ndarray       # (L, K)
    private_mean: np.ndarray     # (K,) complex, own stream
    private_mean_by_cluster: np.ndarray  # (L, K) complex, slot sharers
    private_var: np.ndarray      # (K,) own stream
    private_obs_mean: np.ndarray  # (K,) complex
    private_obs_gain: np.ndarray  # (K,)
    private_obs_var: np.ndarray  # (K,)
    private_est_var: np.ndarray  # (K,)
    private_mse: np.ndarray      # (K,)
    statistical_only: bool = False


def dl_pilot_rho(topology: Topology, config: SimConfig):
    """Temporal correlation of every UE at the DL pilot instants.

    Common pilots occupy instants tau_u + 1 .. tau_u + L (one per cluster);
    UE k's private pilot reuses its UL slot at tau_u + tau_dc + slot + 1.
    """
    vel = np.asarray(config.velocities_kmh())
    lam = config.lambda_instant
    t_common = config.tau_u + 1 + np.arange(config.L)            # (L,)
    rho_c = temporal_corr(t_common[:, None], lam, vel[None, :],
                          config.carrier_hz, config.sample_time_s)
    t_private = config.tau_u + config.tau_dc + topology.pilot_index + 1
    rho_p = temporal_corr(t_private, lam, vel,
                          config.carrier_hz, config.sample_time_s)
    return rho_c, rho_p


def elementary_pair_stats(topology: Topology, ulstats: UlStats,
                          config: SimConfig) -> PairStats:
    """Closed-form moments of g_mki = h_mk[anchor]^H h_hat_mi.

    Independence across APs makes these the only nontrivial building blocks:
    cross-AP covariances of effective-channel terms vanish.  For UEs outside
    k's pilot-sharing set the estimate is independent of h_mk and the
    variance collapses to tr(r_hat_i r_bar_k); sharers add the rank-one
    self-coupling through the observation, evaluated with the Gaussian
    fourth-moment identity below (LoS mean with uniform random phase).
    """
    p_u = config.ul_pilot_w
    r_bar = topology.r_bar                       # (M, K, N, N)
    r_hat = ulstats.r_hat
    gain = ulstats.gain
    rho_ul = ulstats.rho_ul

    # aging gram doubles as the no-coupling variance: tr(r_hat_i r_bar_k)
    az = np.einsum("miab,mkba->mki", r_hat, r_bar).real

    share = topology.pilot_index[:, None] == topology.pilot_index[None, :]  # (K, i)

    # mean: sqrt(p_u) rho_k tr(gain_i r_bar_k) for slot sharers
    mg = np.sqrt(p_u) * rho_ul[None, :, None] * np.einsum(
        "miab,mkba->mki", gain, r_bar)
    mg *= share[None, :, :]

    # sharer correction: p_u rho_k^2 (Q - tr(A r_bar_k B r_bar_k)), with
    # A = gain_i, B = gain_i^H and
    # Q = tr(r_bar_k A r_bar_k B) + (h_bar^H A h_bar) tr(B r_nlos)
    #     + tr(A r_nlos) tr(B r_bar_k)
    gain_h = np.swapaxes(gain, -1, -2).conj()
    r_nlos = topology.r_corr
    h_bar = topology.h_bar
    ar_bar = np.einsum("miab,mkbc->mkiac", gain, r_bar)        # A r_bar_k
    t2 = np.einsum("mkiab,mibc,mkca->mki", ar_bar, gain_h, r_bar)
    q1 = np.einsum("mkab,mibc,mkcd,mida->mki", r_bar, gain, r_bar, gain_h)
    a_quad = np.einsum("mka,miab,mkb->mki", h_bar.conj(), gain, h_bar)
    tr_b_nlos = np.einsum("miab,mkba->mki", gain_h, r_nlos)
    tr_a_nlos = np.einsum("miab,mkba->mki", gain, r_nlos)
    tr_b_rbar = np.einsum("miab,mkba->mki", gain_h, r_bar)
    q = q1 + a_quad * tr_b_nlos + tr_a_nlos * tr_b_rbar

    correction = p_u * rho_ul[None, :, None] ** 2 * (q - t2)
    vg = az + (correction.real - np.abs(mg) ** 2) * share[None, :, :]
    return PairStats(mean=mg, var=vg, aging_gram=az)


def dl_stats_closed_form(topology: Topology, ulstats: UlStats, config: SimConfig,
                         p_common: np.ndarray, p_private: np.ndarray,
                         eta_common: np.ndarray, eta_private: np.ndarray,
                         pair_stats: PairStats | None = None) -> DlStats:
    """Assemble the per-drop LMMSE statistics for both DL training phases.

    In mode RSMA_NO_DL_PILOTS there are no DL pilot instants: the estimator
    gain is forced to zero and the estimates collapse to the prior means.
    """
    ps = pair_stats if pair_stats is not None else elementary_pair_stats(
        topology, ulstats, config)
    sigma2 = config.noise_w
    n_clusters = topology.L
    cl_ue = (topology.cluster_of_ue[None, :] == np.arange(n_clusters)[:, None])
    cl_ap = (topology.cluster_of_ap[None, :] == np.arange(n_clusters)[:, None])
    share = topology.pilot_index[:, None] == topology.pilot_index[None, :]
    same_cluster = (topology.cluster_of_ap[:, None] == topology.cluster_of_ue[None, :])

    wc = np.sqrt(p_common[:, None] * eta_common[None, :]) * cl_ap      # (L, M)
    wp = np.sqrt(p_private[None, :] * eta_private) * same_cluster      # (M, K)

    common_mean = np.einsum("lm,mki,li->lk", wc, ps.mean, cl_ue)
    common_var = np.einsum("lm,mki,li->lk", wc**2, ps.var, cl_ue)
    common_aging = np.einsum("lm,mki,li->lk", wc**2, ps.aging_gram, cl_ue)

    statistical_only = config.mode is Mode.RSMA_NO_DL_PILOTS
    if statistical_only:
        rho_c = np.zeros((n_clusters, topology.K))
        rho_p = np.zeros(topology.K)
    else:
        rho_c, rho_p = dl_pilot_rho(topology, config)

    theta_c = rho_c * common_var
    psi_c = rho_c**2 * common_var + (1.0 - rho_c**2) * common_aging + sigma2
    if (psi_c <= 0.0).any():
        l, k = np.argwhere(psi_c <= 0.0)[0]
        raise StatisticsError(f"common observation variance <= 0 at (l={l}, k={k})")

    mean_diag = np.einsum("mkk->mk", ps.mean)
    var_diag = np.einsum("mkk->mk", ps.var)
    private_mean = np.einsum("mk,mk->k", wp, mean_diag)
    private_var = np.einsum("mk,mk->k", wp**2, var_diag)
    private_mean_by_cluster = np.einsum(
        "lm,li,ki,mi,mki->lk", cl_ap.astype(float), cl_ue, share, wp, ps.mean)
    obs_mean = rho_p * private_mean_by_cluster.sum(axis=0)
    obs_var = np.einsum("mi,ki,mki->k", wp**2, share, ps.var)
    obs_aging = np.einsum("mi,ki,mki->k", wp**2, share, ps.aging_gram)
    theta_p = rho_p * private_var
    psi_p = rho_p**2 * obs_var + (1.0 - rho_p**2) * obs_aging + sigma2
    if (psi_p <= 0.0).any():
        k = int(np.argwhere(psi_p <= 0.0)[0])
        raise StatisticsError(f"private observation variance <= 0 at UE {k}")

    est_var_c = theta_c**2 / psi_c
    est_var_p = theta_p**2 / psi_p
    return DlStats(
        rho_common=rho_c,
        rho_private=rho_p,
        common_mean=common_mean,
        common_var=common_var,
        common_aging_var=common_aging,
        common_obs_gain=theta_c,
        common_obs_var=psi_c,
        common_est_var=est_var_c,
        common_mse=common_var - est_var_c,
        private_mean=private_mean.astype(complex),
        private_mean_by_cluster=private_mean_by_cluster,
        private_var=private_var,
        private_obs_mean=obs_mean.astype(complex),
        private_obs_gain=theta_p,
        private_obs_var=psi_p,
        private_est_var=est_var_p,
        private_mse=private_var - est_var_p,
        statistical_only=statistical_only,
    )


def dl_stats_for_config(topology: Topology, ulstats: UlStats,
                        config: SimConfig) -> DlStats:
    """Convenience wrapper computing powers and normalizers from the config."""
    from cfrsma.precoding import normalization_factors, power_split

    eta_private, eta_common = normalization_factors(topology, ulstats)
    sizes = np.bincount(topology.cluster_of_ue, minlength=topology.L)
    p_common = np.empty(topology.L)
    p_private = np.empty(topology.K)
    for l in range(topology.L):
        pc, pp = power_split(config.t_m, config.p_max_w, int(sizes[l]))
        p_common[l] = pc
        p_private[topology.cluster_of_ue == l] = pp
    return dl_stats_closed_form(topology, ulstats, config, p_common, p_private,
                                eta_common, eta_private)


# ---------------------------------------------------------------------------
# scalar LMMSE estimators
# ---------------------------------------------------------------------------

def dl_common_lmmse(y, stats: DlStats, l: int, k: int):
    """Estimate of cluster l's effective common channel at the anchor from the
    UE's pilot observation y (affine correction of the prior mean)."""
    coef = stats.common_obs_gain[l, k] / stats.common_obs_var[l, k]
    prior_obs = stats.rho_common[l, k] * stats.common_mean[l, k]
    return stats.common_mean[l, k] + coef * (y - prior_obs)


def dl_private_lmmse(y, stats: DlStats, k: int):
    """Estimate of UE k's own effective private channel at the anchor."""
    coef = stats.private_obs_gain[k] / stats.private_obs_var[k]
    return stats.private_mean[k] + coef * (y - stats.private_obs_mean[k])


# ---------------------------------------------------------------------------
# reference-path pilot reception (single realization)
# ---------------------------------------------------------------------------

def effective_channel(block: ChannelBlock, precoders: PrecoderSet, cluster: int,
                      k: int, t: int, kind: str, stream: int | None = None) -> complex:
    """Inner product of UE k's channel at instant t with a cluster's precoder.

    kind="common": the cluster's single common stream. kind="private": the
    stream of UE `stream` (served by `cluster`).
    """
    topo = block.topology
    aps = topo.aps_of_cluster(cluster)
    total = 0.0 + 0.0j
    for m in aps:
        h = block.channel_at(m, k, t)
        if kind == "common":
            total += np.sqrt(precoders.p_common[cluster]) * (h.conj() @ precoders.v_common[m])
        elif kind == "private":
            total += np.sqrt(precoders.p_private[stream]) * (h.conj() @ precoders.v_private[m, stream])
        else:
            raise ValueError(f"unknown effective-channel kind '{kind}'")
    return complex(total)


def effective_innovation(block: ChannelBlock, precoders: PrecoderSet, cluster: int,
                         k: int, t: int, kind: str, stream: int | None = None) -> complex:
    """Same inner product evaluated on the instant-t innovation grid (the
    aging component of the effective channel)."""
    topo = block.topology
    f = block.innovation(t)
    total = 0.0 + 0.0j
    for m in topo.aps_of_cluster(cluster):
        if kind == "common":
            total += np.sqrt(precoders.p_common[cluster]) * (f[m, k].conj() @ precoders.v_common[m])
        else:
            total += np.sqrt(precoders.p_private[stream]) * (f[m, k].conj() @ precoders.v_private[m, stream])
    return complex(total)


def receive_dl_common_pilot(block: ChannelBlock, precoders: PrecoderSet,
                            cluster: int, k: int, rng: np.random.Generator) -> complex:
    """UE k's observation of cluster `cluster`'s common pilot (unit symbol):
    clusters train on orthogonal instants, so only noise is added."""
    t = block.config.tau_u + 1 + cluster
    a = effective_channel(block, precoders, cluster, k, t, "common")
    return a + np.sqrt(block.config.noise_w) * complex(complex_normal(rng, ()))


def receive_dl_private_pilot(block: ChannelBlock, precoders: PrecoderSet,
                             k: int, rng: np.random.Generator) -> complex:
    """UE k's observation of its private pilot instant: its own stream plus
    the simultaneously trained streams of slot sharers in other clusters."""
    topo = block.topology
    cfg = block.config
    t = cfg.tau_u + cfg.tau_dc + int(topo.pilot_index[k]) + 1
    total = 0.0 + 0.0j
    for i in topo.pilot_set(k):
        total += effective_channel(block, precoders, int(topo.cluster_of_ue[i]),
                                   k, t, "private", stream=int(i))
    return total + np.sqrt(cfg.noise_w) * complex(complex_normal(rng, ()))


@dataclass
class DlEstimateSample:
    """Per-realization estimates used by the SIC chain."""

    a_hat_common: np.ndarray   # (L, K) complex
    a_hat_private: np.ndarray  # (K,) complex


def estimate_dl_channels(block: ChannelBlock, precoders: PrecoderSet,
                         stats: DlStats, rng: np.random.Generator) -> DlEstimateSample:
    """Run both DL training phases for one realization (reference path).

    Draw order: per-cluster common pilots (all UEs), then private pilots.
    Without DL pilots the estimates equal the prior means and no randomness
    is consumed.
    """
    topo = block.topology
    n_clusters, n_ues = topo.L, topo.K
    if stats.statistical_only:
        return DlEstimateSample(a_hat_common=stats.common_mean.copy(),
                                a_hat_private=stats.private_mean.copy())
    a_hat_c = np.empty((n_clusters, n_ues), dtype=complex)
    for l in range(n_clusters):
        for k in range(n_ues):
            y = receive_dl_common_pilot(block, precoders, l, k, rng)
            a_hat_c[l, k] = dl_common_lmmse(y, stats, l, k)
    a_hat_p = np.empty(n_ues, dtype=complex)
    for k in range(n_ues):
        y = receive_dl_private_pilot(block, precoders, k, rng)
        a_hat_p[k] = dl_private_lmmse(y, stats, k)
    return DlEstimateSample(a_hat_common=a_hat_c, a_hat_private=a_hat_p)
