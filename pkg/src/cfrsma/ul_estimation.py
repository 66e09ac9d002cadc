"""Uplink pilot reception with contamination and LMMSE channel estimation.

APs estimate the channels of their cluster's UEs at the anchor instant from
pilots received earlier in the block; mobility shrinks the usable part of
the observation through the temporal correlation coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cfrsma.channel import ChannelBlock, complex_normal, temporal_corr
from cfrsma.config import SimConfig
from cfrsma.topology import Topology


@dataclass
class UlStats:
    """Per-topology estimation operators (deterministic given the drop).

    psi[m, s]    : inverse covariance of the slot-s pilot observation at AP m
    gain[m, k]   : matrix mapping the slot observation to the estimate of
                   UE k's channel at the anchor instant
    r_hat[m, k]  : covariance of that estimate
    rho_ul[k]    : temporal correlation between UE k's pilot instant and the
                   anchor
    """

    psi: np.ndarray      # (M, S, N, N)
    gain: np.ndarray     # (M, K, N, N)
    r_hat: np.ndarray    # (M, K, N, N)
    rho_ul: np.ndarray   # (K,)


def ul_pilot_rho(config: SimConfig, pilot_index: np.ndarray) -> np.ndarray:
    """(K,) correlation of each UE's channel between its pilot slot and the
    anchor instant (slot s occupies absolute instant s + 1, 0-based s)."""
    vel = np.asarray(config.velocities_kmh())
    t_pilot = pilot_index + 1
    return temporal_corr(t_pilot, config.lambda_instant, vel,
                         config.carrier_hz, config.sample_time_s)


def compute_ul_stats(topology: Topology, config: SimConfig) -> UlStats:
    """Build the LMMSE operators for every (AP, UE) pair.

    The slot observation covariance sums the total channel covariance of
    every UE transmitting in that slot (stationary in time, so aging does
    not change it) plus receiver noise.
    """
    m_aps, k_ues, n_ant = topology.M, topology.K, topology.N
    n_slots = topology.tau_u
    p_u = config.ul_pilot_w
    sigma2 = config.noise_w
    r_bar = topology.r_bar
    rho_ul = ul_pilot_rho(config, topology.pilot_index)

    slot_onehot = (topology.pilot_index[None, :] == np.arange(n_slots)[:, None])  # (S, K)
    cov = np.einsum("sk,mkab->msab", slot_onehot, r_bar) * p_u
    cov += sigma2 * np.eye(n_ant)[None, None]
    psi = np.linalg.inv(cov)                                     # (M, S, N, N)

    psi_of_ue = psi[:, topology.pilot_index]                     # (M, K, N, N)
    gain = (rho_ul[None, :, None, None] * np.sqrt(p_u)
            * np.einsum("mkab,mkbc->mkac", r_bar, psi_of_ue))
    # gain @ cov_obs @ gain^H collapses to rho * sqrt(p_u) * gain @ r_bar
    r_hat = (rho_ul[None, :, None, None] * np.sqrt(p_u)
             * np.einsum("mkab,mkbc->mkac", gain, r_bar))
    return UlStats(psi=psi, gain=gain, r_hat=r_hat, rho_ul=rho_ul)


def receive_ul_pilot(block: ChannelBlock, m: int, slot: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Pilot-slot observation at AP m: superposition of all UEs sharing the
    slot (unit pilot symbol) plus receiver noise."""
    topo = block.topology
    cfg = block.config
    t_pilot = slot + 1
    y = np.zeros(topo.N, dtype=complex)
    for i in np.flatnonzero(topo.pilot_index == slot):
        y += np.sqrt(cfg.ul_pilot_w) * block.channel_at(m, i, t_pilot)
    return y + np.sqrt(cfg.noise_w) * complex_normal(rng, (topo.N,))


def ul_lmmse(y: np.ndarray, topology: Topology, m: int, k: int, rho_tk: float,
             p_u: float, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """LMMSE estimate of UE k's anchor-instant channel from its slot
    observation, with the estimate covariance.

    The observation is zero-mean (the LoS phase is unknown), so the total
    covariance including the LoS outer product drives the filter.
    """
    r_bar = topology.r_bar[m]
    sharers = topology.pilot_set(k)
    cov = p_u * r_bar[sharers].sum(axis=0) + sigma2 * np.eye(topology.N)
    psi = np.linalg.inv(cov)
    gain = rho_tk * np.sqrt(p_u) * r_bar[k] @ psi
    h_hat = gain @ y
    r_hat = rho_tk * np.sqrt(p_u) * gain @ r_bar[k]
    return h_hat, r_hat


# ---------------------------------------------------------------------------
# batched helpers for the Monte Carlo engine
# ---------------------------------------------------------------------------

def simulate_ul_observations(topology: Topology, config: SimConfig,
                             anchors: np.ndarray, innovations: np.ndarray,
                             noise: np.ndarray, rho_ul: np.ndarray) -> np.ndarray:
    """Assemble the per-slot observations for a batch of realizations.

    anchors, innovations: (B, M, K, N); noise: (B, M, S, N) unit variance.
    Returns (B, M, S, N).
    """
    h_pilot = rho_ul[None, None, :, None] * anchors
    h_pilot += np.sqrt(np.clip(1.0 - rho_ul**2, 0.0, None))[None, None, :, None] * innovations
    slot_onehot = (topology.pilot_index[None, :] == np.arange(topology.tau_u)[:, None])
    y = np.sqrt(config.ul_pilot_w) * np.einsum("sk,bmkn->bmsn", slot_onehot, h_pilot)
    return y + np.sqrt(config.noise_w) * noise


def apply_ul_lmmse(topology: Topology, ulstats: UlStats, y: np.ndarray) -> np.ndarray:
    """(B, M, S, N) observations -> (B, M, K, N) anchor-instant estimates."""
    y_per_ue = y[:, :, topology.pilot_index]                 # (B, M, K, N)
    return np.einsum("mkxy,rmky->rmkx", ulstats.gain, y_per_ue)
