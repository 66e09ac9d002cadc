"""Maximum-ratio precoders for the common and private streams with analytic
statistical normalization and the common/private transmit power split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cfrsma.config import SimConfig
from cfrsma.topology import Topology
from cfrsma.ul_estimation import UlStats


class PrecodingError(RuntimeError):
    """Raised when a precoder cannot be normalized (zero-power estimate)."""


@dataclass
class PrecoderSet:
    """Per-realization precoders of every AP.

    v_private[m, k] is nonzero only when AP m serves UE k's cluster;
    v_common[m] is AP m's single common-stream precoder (for its own
    cluster).  eta_* are the deterministic normalization factors such that
    E[||v||^2] = 1 holds over channel realizations.
    """

    v_private: np.ndarray    # (M, K, N) complex
    v_common: np.ndarray     # (M, N) complex
    eta_private: np.ndarray  # (M, K)
    eta_common: np.ndarray   # (M,)
    p_common: np.ndarray     # (L,) W per AP for the common stream
    p_private: np.ndarray    # (K,) W per AP for each private stream


def power_split(t_m: float, p_max_w: float, cluster_ue_count: int) -> tuple[float, float]:
    """Split the per-AP budget: common stream gets (1 - t_m) p_max, each of
    the cluster's private streams gets t_m p_max / cluster size."""
    if not 0.0 <= t_m <= 1.0:
        raise ValueError(f"t_m must lie in [0, 1], got {t_m}")
    if cluster_ue_count < 1:
        raise ValueError("cluster without UEs has no private streams to power")
    return (1.0 - t_m) * p_max_w, t_m * p_max_w / cluster_ue_count


def normalization_factors(topology: Topology, ulstats: UlStats):
    """Analytic E[||.||^2] normalizers from the estimate covariances.

    Private: eta_mk = 1 / tr(r_hat[m, k]).  Common: the summed estimate of a
    cluster has uncorrelated terms (orthogonal in-cluster pilots, zero-mean
    estimates), so eta_lm = 1 / sum_i tr(r_hat[m, i]).
    """
    traces = np.einsum("mkaa->mk", ulstats.r_hat).real        # (M, K)
    if (traces <= 0.0).any():
        m, k = np.argwhere(traces <= 0.0)[0]
        raise PrecodingError(f"estimate of pair (AP {m}, UE {k}) carries no power")
    eta_private = 1.0 / traces
    n_clusters = topology.L
    ue_mask = (topology.cluster_of_ue[None, :] == np.arange(n_clusters)[:, None])
    cluster_trace = traces @ ue_mask.T                        # (M, L)
    eta_common = 1.0 / cluster_trace[np.arange(topology.M), topology.cluster_of_ap]
    return eta_private, eta_common


def build_precoders(topology: Topology, ulstats: UlStats, h_hat: np.ndarray,
                    config: SimConfig) -> PrecoderSet:
    """Maximum-ratio precoders from one realization's channel estimates.

    h_hat: (M, K, N).  Private precoder of (m, k) points along the estimate;
    the common precoder of AP m sums the estimates of its cluster's UEs.
    """
    eta_private, eta_common = normalization_factors(topology, ulstats)
    same_cluster = (topology.cluster_of_ap[:, None] == topology.cluster_of_ue[None, :])
    v_private = np.sqrt(eta_private)[..., None] * h_hat * same_cluster[..., None]
    summed = np.einsum("mk,mkn->mn", same_cluster.astype(float), h_hat)
    v_common = np.sqrt(eta_common)[:, None] * summed

    sizes = np.bincount(topology.cluster_of_ue, minlength=topology.L)
    p_common = np.empty(topology.L)
    p_private = np.empty(topology.K)
    for l in range(topology.L):
        pc, pp = power_split(config.t_m, config.p_max_w, int(sizes[l]))
        p_common[l] = pc
        p_private[topology.cluster_of_ue == l] = pp
    return PrecoderSet(v_private=v_private, v_common=v_common,
                       eta_private=eta_private, eta_common=eta_common,
                       p_common=p_common, p_private=p_private)
