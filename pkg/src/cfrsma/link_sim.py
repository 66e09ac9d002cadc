"""Data-phase SIC decoding chain and ergodic spectral-efficiency accumulation.

Two routes share the same term definitions: a scalar reference path built on
:class:`ChannelBlock` (used by the verification suite), and a batched engine
that vectorizes realizations and data instants per network drop.  Trials use
counter-derived RNG substreams keyed by (seed, drop, batch), and per-drop
results are reduced in drop order, so reports are bit-identical for any
worker count.
"""

from __future__ import annotations

import concurrent.futures
import contextlib
from dataclasses import dataclass, field, replace

import numpy as np

try:
    from threadpoolctl import threadpool_limits as _blas_limit
except ImportError:                                      # pragma: no cover
    def _blas_limit(limits=None):
        return contextlib.nullcontext()

from cfrsma.channel import ChannelBlock, complex_normal, temporal_corr
from cfrsma.config import ConfigError, Mode, SimConfig
from cfrsma.dl_estimation import (DlEstimateSample, DlStats, dl_stats_closed_form,
                                  effective_channel, effective_innovation,
                                  elementary_pair_stats, estimate_dl_channels)
from cfrsma.precoding import PrecoderSet, build_precoders, normalization_factors, power_split
from cfrsma.topology import Topology, drop_network
from cfrsma.ul_estimation import (apply_ul_lmmse, compute_ul_stats, receive_ul_pilot,
                                  simulate_ul_observations)

LOG2 = np.log(2.0)

# realizations are simulated in fixed-size batches; the batch size is part of
# the RNG stream layout, so changing it changes the sampled values
REALIZATION_BATCH = 32

_STREAM_TOPOLOGY = 0
_STREAM_TRIAL = 1


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-derived substream: deterministic regardless of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# ---------------------------------------------------------------------------
# per-UE SINR terms (reference path)
# ---------------------------------------------------------------------------

@dataclass
class UeSinrTerms:
    """Signal decomposition of one UE at one data instant.

    noise_common components: estimation error, aging, residual cross-cluster
    interference, all private streams, receiver noise.  noise_private:
    estimation error, aging, private interference, residual cross-cluster
    interference, receiver noise.  desired + sum(noise) reassembles the
    post-SIC received signal exactly.
    """

    desired_common: complex
    noise_common: np.ndarray     # (5,) complex
    desired_private: complex
    noise_private: np.ndarray    # (5,) complex


def sinr(terms: UeSinrTerms, kind: str) -> float:
    """Instantaneous SINR: |desired|^2 over the summed squared magnitudes of
    the five effective-noise terms."""
    if kind == "common":
        num, den = terms.desired_common, terms.noise_common
    elif kind == "private":
        num, den = terms.desired_private, terms.noise_private
    else:
        raise ValueError(f"unknown SINR kind '{kind}'")
    total = float(np.sum(np.abs(den) ** 2))
    if total <= 0.0:
        raise FloatingPointError("all effective-noise terms vanished")
    return float(np.abs(num) ** 2) / total


def simulate_instant(block: ChannelBlock, precoders: PrecoderSet,
                     dl_est: DlEstimateSample, t: int,
                     rng: np.random.Generator) -> list[UeSinrTerms]:
    """Decode instant t for every UE (reference path).

    Draws unit-modulus data symbols (private streams first, then common) and
    receiver noise, then forms each decomposition term from the true
    effective channels, the anchor estimates and the aging innovations.
    """
    topo = block.topology
    cfg = block.config
    n_ues, n_clusters = topo.K, topo.L
    lam = block.lam
    x_p = np.exp(1j * rng.uniform(-np.pi, np.pi, n_ues))
    x_c = np.exp(1j * rng.uniform(-np.pi, np.pi, n_clusters))
    noise = np.sqrt(cfg.noise_w) * complex_normal(rng, (n_ues,))
    rho_t = block.rho_at(t)
    rho_bar_t = np.sqrt(np.clip(1.0 - rho_t**2, 0.0, None))

    out = []
    for k in range(n_ues):
        own = int(topo.cluster_of_ue[k])
        a_c_t = np.array([effective_channel(block, precoders, l, k, t, "common")
                          for l in range(n_clusters)])
        a_p_t = np.array([effective_channel(block, precoders,
                                            int(topo.cluster_of_ue[j]), k, t,
                                            "private", stream=j)
                          for j in range(n_ues)])
        a_c_own_lam = effective_channel(block, precoders, own, k, lam, "common")
        a_p_own_lam = effective_channel(block, precoders, own, k, lam, "private", stream=k)
        z_c_own = effective_innovation(block, precoders, own, k, t, "common")
        z_p_own = effective_innovation(block, precoders, own, k, t, "private", stream=k)
        a_hat_c = dl_est.a_hat_common[:, k]
        a_hat_p = dl_est.a_hat_private[k]

        residual_mci = sum((a_c_t[l] - a_hat_c[l]) * x_c[l]
                           for l in range(n_clusters) if l != own)
        private_mix = np.sum(a_p_t * x_p)
        n_common = rho_t[k] * a_hat_c[own] * x_c[own]
        d_common = np.array([
            rho_t[k] * (a_c_own_lam - a_hat_c[own]) * x_c[own],
            rho_bar_t[k] * z_c_own * x_c[own],
            residual_mci,
            private_mix,
            noise[k],
        ])
        n_private = rho_t[k] * a_hat_p * x_p[k]
        d_private = np.array([
            rho_t[k] * (a_p_own_lam - a_hat_p) * x_p[k],
            rho_bar_t[k] * z_p_own * x_p[k],
            private_mix - a_p_t[k] * x_p[k],
            residual_mci,
            noise[k],
        ])
        out.append(UeSinrTerms(desired_common=complex(n_common), noise_common=d_common,
                               desired_private=complex(n_private), noise_private=d_private))
    return out


# ---------------------------------------------------------------------------
# report structure
# ---------------------------------------------------------------------------

@dataclass
class SeReport:
    """Ergodic spectral efficiencies of one (config, mode) run.

    Per-drop values are retained so runs with shared drops can be compared
    with paired standard errors.  Standard errors are across drops (0 when a
    single drop is simulated).
    """

    mode: Mode
    se_sum: float
    se_sum_stderr: float
    se_common_sum: float
    se_private_sum: float
    se_common_per_cluster: np.ndarray        # (L,)
    se_common_per_cluster_stderr: np.ndarray
    se_private_per_ue: np.ndarray            # (K,)
    se_private_per_ue_stderr: np.ndarray
    per_drop_sum: np.ndarray                 # (drops,)
    per_drop_common: np.ndarray              # (drops,)
    per_drop_private: np.ndarray             # (drops,)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# batched drop engine
# ---------------------------------------------------------------------------

@dataclass
class _ModePlan:
    mode: Mode
    config: SimConfig
    p_common: np.ndarray      # (L,)
    p_private: np.ndarray     # (K,)
    stats: DlStats


def _mode_plans(topology: Topology, ulstats, pair_stats, configs: dict) -> list[_ModePlan]:
    eta_private, eta_common = normalization_factors(topology, ulstats)
    sizes = np.bincount(topology.cluster_of_ue, minlength=topology.L)
    plans = []
    for mode, cfg in configs.items():
        p_common = np.empty(topology.L)
        p_private = np.empty(topology.K)
        for l in range(topology.L):
            pc, pp = power_split(cfg.t_m, cfg.p_max_w, int(sizes[l]))
            p_common[l] = pc
            p_private[topology.cluster_of_ue == l] = pp
        stats = dl_stats_closed_form(topology, ulstats, cfg, p_common, p_private,
                                     eta_common, eta_private, pair_stats=pair_stats)
        plans.append(_ModePlan(mode=mode, config=cfg, p_common=p_common,
                               p_private=p_private, stats=stats))
    return plans


def _grid(topology: Topology, rng: np.random.Generator, batch: int,
          aps: np.ndarray | None = None) -> np.ndarray:
    """Batched channel/innovation grid draw (optionally restricted to a set
    of APs), matching the single-grid distribution."""
    k_ues, n_ant = topology.K, topology.N
    m_sel = topology.M if aps is None else len(aps)
    phase = rng.uniform(-np.pi, np.pi, (batch, m_sel, k_ues))
    g = complex_normal(rng, (batch, m_sel, k_ues, n_ant))
    h_bar = topology.h_bar if aps is None else topology.h_bar[aps]
    r_sqrt = topology.r_sqrt if aps is None else topology.r_sqrt[aps]
    return h_bar * np.exp(1j * phase)[..., None] + np.einsum(
        "mkxy,rmky->rmkx", r_sqrt, g)


def _simulate_drop(base: SimConfig, mode_configs: dict, drop_idx: int) -> dict:
    """Simulate one drop for every mode of a frame-compatible group.

    Returns per-mode (se_common_kt, se_private_kt) grids of mean
    log2(1 + SINR) per (UE, data instant), plus the drop's UE->cluster map.
    Per-batch draw order: anchor grid, UL innovation grid, UL noise,
    [per-cluster common-pilot grids, common-pilot noise, private-pilot grid,
    private-pilot noise,] data LoS phases, data innovations, data symbols,
    data noise.
    """
    topo = drop_network(base, rng_for(base.seed, _STREAM_TOPOLOGY, drop_idx))
    ulstats = compute_ul_stats(topo, base)
    pair_stats = elementary_pair_stats(topo, ulstats, base)
    plans = _mode_plans(topo, ulstats, pair_stats, mode_configs)

    m_aps, k_ues, n_ant = topo.M, topo.K, topo.N
    n_clusters = topo.L
    n_cols = k_ues + n_clusters
    lam = base.lambda_instant
    data_ts = np.arange(lam, base.tau_c + 1)
    n_t = data_ts.size
    vel = np.asarray(base.velocities_kmh())
    rho_kt = temporal_corr(data_ts[None, :], lam, vel[:, None],
                           base.carrier_hz, base.sample_time_s)      # (K, T)
    rho_kt = np.atleast_2d(rho_kt)
    rho_bar_kt = np.sqrt(np.clip(1.0 - rho_kt**2, 0.0, None))
    static_block = bool(np.all(rho_kt == 1.0))
    with_dl = base.tau_dc > 0
    if with_dl:
        rho_c = plans[0].stats.rho_common                            # (L, K)
        rho_p = plans[0].stats.rho_private                           # (K,)
    sigma = np.sqrt(base.noise_w)
    same_cluster = (topo.cluster_of_ap[:, None] == topo.cluster_of_ue[None, :])
    share = topo.pilot_index[:, None] == topo.pilot_index[None, :]
    own_cl = topo.cluster_of_ue
    ue_idx = np.arange(k_ues)
    eta_private, eta_common = normalization_factors(topo, ulstats)
    cluster_aps = [topo.aps_of_cluster(l) for l in range(n_clusters)]

    acc = {p.mode: (np.zeros((k_ues, n_t)), np.zeros((k_ues, n_t))) for p in plans}
    # (M, K*N, N) conjugate-transposed colouring roots: fold the spatial
    # correlation of every UE channel into the precoder columns per batch
    color_fold = np.ascontiguousarray(
        topo.r_sqrt.conj().transpose(0, 1, 3, 2)).reshape(m_aps, k_ues * n_ant, n_ant)
    h_bar_conj = topo.h_bar.conj()                                   # (M, K, N)
    # precoder columns of different clusters live on disjoint APs, so the
    # projected innovation covariance is block-diagonal per cluster
    col_groups = [np.concatenate([topo.ues_of_cluster(l), [k_ues + l]])
                  for l in range(n_clusters)]
    n_real = base.realizations
    for batch_idx, start in enumerate(range(0, n_real, REALIZATION_BATCH)):
        b = min(REALIZATION_BATCH, n_real - start)
        rng = rng_for(base.seed, _STREAM_TRIAL, drop_idx, batch_idx)

        anchors = _grid(topo, rng, b)
        f_ul = _grid(topo, rng, b)
        noise_ul = complex_normal(rng, (b, m_aps, topo.tau_u, n_ant))
        y_ul = simulate_ul_observations(topo, base, anchors, f_ul, noise_ul,
                                        ulstats.rho_ul)
        h_hat = apply_ul_lmmse(topo, ulstats, y_ul)

        # unscaled precoder columns: private streams 0..K-1, common K..K+L-1
        v = np.zeros((b, m_aps, n_ant, n_cols), dtype=complex)
        v[..., :k_ues] = (np.sqrt(eta_private)[None, :, :, None]
                          * same_cluster[None, :, :, None]
                          * h_hat).transpose(0, 1, 3, 2)
        v_common = np.sqrt(eta_common)[None, :, None] * np.einsum(
            "mk,bmkn->bmn", same_cluster.astype(float), h_hat)
        for l in range(n_clusters):
            aps = cluster_aps[l]
            v[..., k_ues + l][:, aps] = v_common[:, aps]
        v_rows = v.reshape(b, m_aps * n_ant, n_cols)                 # (B, MN, C)

        anchor_rows = anchors.conj().transpose(0, 2, 1, 3).reshape(
            b, k_ues, m_aps * n_ant)
        i_lam = np.matmul(anchor_rows, v_rows)                       # (B, K, C)

        if with_dl:
            yc_raw = np.empty((b, n_clusters, k_ues), dtype=complex)
            for l in range(n_clusters):
                aps = cluster_aps[l]
                f_l = _grid(topo, rng, b, aps=aps)
                h_tl = (rho_c[l][None, None, :, None] * anchors[:, aps]
                        + np.sqrt(1.0 - rho_c[l][None, None, :, None] ** 2) * f_l)
                yc_raw[:, l] = np.einsum("bmkn,bmn->bk", h_tl.conj(),
                                         v[..., k_ues + l][:, aps])
            noise_c = complex_normal(rng, (b, n_clusters, k_ues))
            f_dlp = _grid(topo, rng, b)
            h_tp = (rho_p[None, None, :, None] * anchors
                    + np.sqrt(1.0 - rho_p[None, None, :, None] ** 2) * f_dlp)
            h_tp_rows = h_tp.conj().transpose(0, 2, 1, 3).reshape(
                b, k_ues, m_aps * n_ant)
            i_dlp = np.matmul(h_tp_rows, v_rows[..., :k_ues])
            noise_p = complex_normal(rng, (b, k_ues))

        if static_block:
            z_in = np.zeros((b, k_ues, n_t, n_cols), dtype=complex)
        else:
            phases = rng.uniform(-np.pi, np.pi, (b, k_ues, n_t, m_aps))
            u = complex_normal(rng, (b, k_ues, n_t, n_cols))
            # the diffuse innovation part enters only through its projections
            # onto the precoder columns, so it is sampled directly in that
            # space; the per-cluster blocks of the projected covariance are
            # factored independently (cross-cluster blocks are zero)
            folded = np.matmul(color_fold[None], v)                  # (B, M, K*N, C)
            folded = np.ascontiguousarray(
                folded.reshape(b, m_aps, k_ues, n_ant, n_cols).transpose(0, 2, 1, 3, 4)
            ).reshape(b, k_ues, m_aps * n_ant, n_cols)
            unit = np.empty(phases.shape, dtype=complex)
            np.cos(phases, out=unit.real)
            np.sin(phases, out=unit.imag)
            z_in = np.empty((b, k_ues, n_t, n_cols), dtype=complex)
            for l in range(n_clusters):
                aps = cluster_aps[l]
                cols = col_groups[l]
                n_block = cols.size
                if n_clusters == 1:
                    vf = folded
                else:
                    rows = (aps[:, None] * n_ant + np.arange(n_ant)[None, :]).ravel()
                    vf = folded[:, :, rows[:, None], cols[None, :]]
                gram = np.matmul(vf.conj().swapaxes(-1, -2), vf)
                scale = np.einsum("bkcc->bk", gram).real / n_block
                gram += (1e-12 * scale)[..., None, None] * np.eye(n_block)
                factor = np.linalg.cholesky(gram)
                z_block = np.matmul(u[..., cols], factor.conj().swapaxes(-1, -2))
                # LoS part: one fresh uniform phase per AP and instant
                p_fold = np.ascontiguousarray(np.matmul(
                    h_bar_conj[aps][:, :, None, :],
                    v[:, aps][..., cols][:, :, None])[:, :, :, 0].transpose(0, 2, 1, 3))
                z_block += np.matmul(unit[..., aps], p_fold)
                z_in[..., cols] = z_block

        sym_phase = rng.uniform(-np.pi, np.pi, (b, n_t, n_cols))
        sym = np.exp(1j * sym_phase)
        x_p = sym[..., :k_ues]                                       # (B, T, K)
        x_c = sym[..., k_ues:]                                       # (B, T, L)
        noise_d = sigma * complex_normal(rng, (b, k_ues, n_t))
        abs_noise2 = np.abs(noise_d) ** 2

        z_c_own_raw = z_in[:, ue_idx, :, k_ues + own_cl].transpose(1, 0, 2)
        z_p_own_raw = z_in[:, ue_idx, :, ue_idx].transpose(1, 0, 2)
        # (B, T, K/L, C) copies make the weighted stream sums batched matmuls
        z_bt_p = np.ascontiguousarray(z_in[..., :k_ues].transpose(0, 2, 1, 3))
        z_bt_c = np.ascontiguousarray(z_in[..., k_ues:].transpose(0, 2, 1, 3))
        i_lam_c_own = i_lam[:, ue_idx, k_ues + own_cl]               # (B, K)
        i_lam_p_own = i_lam[:, ue_idx, ue_idx]
        xc_own = x_c[:, :, own_cl].transpose(0, 2, 1)                # (B, K, T)
        xp_own = x_p[:, :, ue_idx].transpose(0, 2, 1)

        for plan in plans:
            s_com = np.sqrt(plan.p_common)
            s_priv = np.sqrt(plan.p_private)
            stats = plan.stats
            sdma_like = bool(plan.p_common.max() == 0.0)
            if stats.statistical_only:
                a_hat_c = np.broadcast_to(stats.common_mean, (b, n_clusters, k_ues))
                a_hat_p = np.broadcast_to(stats.private_mean, (b, k_ues))
            else:
                y_c = s_com[None, :, None] * yc_raw + sigma * noise_c
                coef_c = stats.common_obs_gain / stats.common_obs_var
                a_hat_c = stats.common_mean + coef_c * (
                    y_c - stats.rho_common * stats.common_mean)
                y_p = np.einsum("ki,i,bki->bk", share, s_priv, i_dlp)
                y_p = y_p + sigma * noise_p
                coef_p = stats.private_obs_gain / stats.private_obs_var
                a_hat_p = stats.private_mean + coef_p * (y_p - stats.private_obs_mean)

            # power scales are folded into the symbols for the stream sums
            # and into the gathered own-channel scalars elsewhere
            xs_c = x_c * s_com                                       # (B, T, L)
            xs_p = x_p * s_priv
            own_sc = s_com[own_cl]
            own_sp = s_priv

            d4_z = np.matmul(z_bt_p, xs_p[..., None])[..., 0].transpose(0, 2, 1)
            d4 = (rho_kt[None] * np.matmul(i_lam[..., :k_ues], xs_p.swapaxes(1, 2))
                  + rho_bar_kt[None] * d4_z)
            a_t_p_own = (rho_kt[None] * (own_sp * i_lam_p_own)[..., None]
                         + rho_bar_kt[None] * own_sp[None, :, None] * z_p_own_raw)
            if sdma_like:
                gamma_c = np.zeros((b, k_ues, n_t))
                d3 = 0.0
                abs_d3 = 0.0
            else:
                a_hat_c_own = a_hat_c[:, own_cl, ue_idx]             # (B, K)
                a_lam_c_own = own_sc * i_lam_c_own
                z_c_own = own_sc[None, :, None] * z_c_own_raw
                n_c = rho_kt[None] * a_hat_c_own[..., None] * xc_own
                d1 = rho_kt[None] * (a_lam_c_own - a_hat_c_own)[..., None] * xc_own
                d2 = rho_bar_kt[None] * z_c_own * xc_own
                resid_z = np.matmul(z_bt_c, xs_c[..., None])[..., 0].transpose(0, 2, 1)
                resid_all = (rho_kt[None] * np.matmul(i_lam[..., k_ues:],
                                                      xs_c.swapaxes(1, 2))
                             + rho_bar_kt[None] * resid_z
                             - np.matmul(a_hat_c.swapaxes(1, 2), x_c.swapaxes(1, 2)))
                a_t_c_own = (rho_kt[None] * a_lam_c_own[..., None]
                             + rho_bar_kt[None] * z_c_own)
                resid_own = (a_t_c_own - a_hat_c_own[..., None]) * xc_own
                d3 = resid_all - resid_own
                abs_d3 = np.abs(d3) ** 2
                gamma_c = np.abs(n_c) ** 2 / (np.abs(d1) ** 2 + np.abs(d2) ** 2
                                              + abs_d3 + np.abs(d4) ** 2
                                              + abs_noise2)

            n_p = rho_kt[None] * a_hat_p[..., None] * xp_own
            d1p = rho_kt[None] * ((own_sp * i_lam_p_own) - a_hat_p)[..., None] * xp_own
            d2p = rho_bar_kt[None] * (own_sp[None, :, None] * z_p_own_raw) * xp_own
            d3p = d4 - a_t_p_own * xp_own
            gamma_p = np.abs(n_p) ** 2 / (np.abs(d1p) ** 2 + np.abs(d2p) ** 2
                                          + np.abs(d3p) ** 2 + abs_d3
                                          + abs_noise2)

            se_c, se_p = acc[plan.mode]
            se_c += np.log1p(gamma_c).sum(axis=0) / LOG2
            se_p += np.log1p(gamma_p).sum(axis=0) / LOG2

    out = {}
    for plan in plans:
        se_c, se_p = acc[plan.mode]
        out[plan.mode] = (se_c / n_real, se_p / n_real)
    return {"se": out, "cluster_of_ue": topo.cluster_of_ue}


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run_modes(config: SimConfig, modes: list[Mode], threads: int = 1,
              progress=None) -> dict[Mode, SeReport]:
    """Run every requested mode over shared drops and channel realizations.

    All modes must resolve to the same frame structure (rate splitting with
    DL pilots and SDMA share one; the no-DL-pilot variant has its own).
    Shared drops make cross-mode differences pairable per drop.
    """
    mode_configs: dict[Mode, SimConfig] = {}
    frames = set()
    for mode in modes:
        cfg = replace(config, mode=mode,
                      tau_dc=None if mode is Mode.RSMA_NO_DL_PILOTS else config.tau_dc,
                      tau_dp=None if mode is Mode.RSMA_NO_DL_PILOTS else config.tau_dp,
                      ).resolve()
        mode_configs[mode] = cfg
        frames.add((cfg.tau_u, cfg.tau_dc, cfg.tau_dp, cfg.tau_c))
    if len(frames) != 1:
        raise ConfigError(
            "modes with different frame structures cannot share a run: "
            + ", ".join(m.value for m in modes))
    base = mode_configs[modes[0]]

    # engine gemms are small; nested BLAS threading only causes
    # oversubscription, so it is pinned for the drop loop
    results: list[dict | None] = [None] * base.drops
    with _blas_limit(limits=1):
        if threads <= 1:
            for d in range(base.drops):
                results[d] = _simulate_drop(base, mode_configs, d)
                if progress:
                    progress(d + 1, base.drops)
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
                futures = {pool.submit(_simulate_drop, base, mode_configs, d): d
                           for d in range(base.drops)}
                done = 0
                for fut in concurrent.futures.as_completed(futures):
                    results[futures[fut]] = fut.result()
                    done += 1
                    if progress:
                        progress(done, base.drops)

    tau_c = base.tau_c
    reports = {}
    for mode in modes:
        cfg = mode_configs[mode]
        drop_sum = np.empty(base.drops)
        drop_common = np.empty(base.drops)
        drop_private = np.empty(base.drops)
        drop_cluster = np.empty((base.drops, base.L))
        drop_ue = np.empty((base.drops, base.K))
        for d, res in enumerate(results):
            se_c_kt, se_p_kt = res["se"][mode]
            cl = res["cluster_of_ue"]
            per_cluster = np.array([
                se_c_kt[cl == l].min(axis=0).sum() / tau_c for l in range(base.L)])
            per_ue = se_p_kt.sum(axis=1) / tau_c
            drop_cluster[d] = per_cluster
            drop_ue[d] = per_ue
            drop_common[d] = per_cluster.sum()
            drop_private[d] = per_ue.sum()
            drop_sum[d] = drop_common[d] + drop_private[d]
        reports[mode] = SeReport(
            mode=mode,
            se_sum=float(drop_sum.mean()),
            se_sum_stderr=_stderr(drop_sum),
            se_common_sum=float(drop_common.mean()),
            se_private_sum=float(drop_private.mean()),
            se_common_per_cluster=drop_cluster.mean(axis=0),
            se_common_per_cluster_stderr=_stderr_axis(drop_cluster),
            se_private_per_ue=drop_ue.mean(axis=0),
            se_private_per_ue_stderr=_stderr_axis(drop_ue),
            per_drop_sum=drop_sum,
            per_drop_common=drop_common,
            per_drop_private=drop_private,
            meta={
                "mode": mode.value,
                "drops": base.drops,
                "realizations": base.realizations,
                "seed": base.seed,
                "config_hash": cfg.config_hash(),
                "lambda_instant": base.lambda_instant,
                "data_instants": int(tau_c - base.lambda_instant + 1),
            },
        )
    return reports


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def _stderr_axis(x: np.ndarray) -> np.ndarray:
    if x.shape[0] > 1:
        return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    return np.zeros(x.shape[1])


def ergodic_se(config: SimConfig, threads: int = 1) -> SeReport:
    """Ergodic SE of the configured mode: drops x realizations Monte Carlo,
    per-cluster common SE as the minimum of per-UE means, time-averaged over
    the data instants with the 1/tau_c prefactor."""
    cfg = config.resolve()
    return run_modes(cfg, [cfg.mode], threads=threads)[cfg.mode]


def reference_trial(topology: Topology, config: SimConfig, rng: np.random.Generator):
    """Scalar-path setup for one realization: block, precoders, statistics
    and DL estimates.  Mirrors one engine realization without batching; used
    by the verification suite."""
    block = ChannelBlock(topology, config, rng)
    ulstats = compute_ul_stats(topology, config)
    y = np.zeros((topology.M, topology.tau_u, topology.N), dtype=complex)
    for m in range(topology.M):
        for s in range(topology.tau_u):
            y[m, s] = receive_ul_pilot(block, m, s, rng)
    h_hat = np.einsum("mkxy,mky->mkx", ulstats.gain, y[:, topology.pilot_index])
    precoders = build_precoders(topology, ulstats, h_hat, config)
    stats = dl_stats_closed_form(
        topology, ulstats, config,
        precoders.p_common, precoders.p_private,
        precoders.eta_common, precoders.eta_private)
    dl_est = estimate_dl_channels(block, precoders, stats, rng)
    return block, precoders, stats, dl_est
