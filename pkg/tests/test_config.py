import dataclasses

import pytest
from hypothesis import given, strategies as st

from cfrsma.config import ConfigError, Mode, SimConfig, parse_config_file


def test_defaults_resolve():
    cfg = SimConfig().resolve()
    assert cfg.tau_u == -(-cfg.K // cfg.L)
    assert cfg.tau_dc == cfg.L
    assert cfg.tau_dp == cfg.tau_u
    assert cfg.lambda_instant == cfg.tau_u + cfg.tau_dc + cfg.tau_dp + 1
    assert len(cfg.data_instants) == cfg.tau_c - cfg.tau_u - cfg.tau_d


def test_sdma_forces_full_private_split():
    cfg = SimConfig(mode=Mode.SDMA, t_m=0.05).resolve()
    assert cfg.t_m == 1.0


def test_no_dl_pilots_collapses_training():
    cfg = SimConfig(mode=Mode.RSMA_NO_DL_PILOTS).resolve()
    assert cfg.tau_dc == 0 and cfg.tau_dp == 0
    assert cfg.lambda_instant == cfg.tau_u + 1


def test_frame_overflow_rejected():
    with pytest.raises(ConfigError, match="data phase"):
        SimConfig(K=16, L=1, tau_c=20).resolve()


def test_pilot_capacity_rejected():
    with pytest.raises(ConfigError, match="pilot capacity"):
        SimConfig(K=16, L=2, tau_u=4).resolve()


def test_tau_dc_must_cover_clusters():
    with pytest.raises(ConfigError, match="tau_dc"):
        SimConfig(L=4, tau_dc=2, K=8).resolve()


def test_bad_cluster_count():
    with pytest.raises(ConfigError, match="L="):
        SimConfig(M=4, K=2, L=3).resolve()


def test_velocity_vector_length_checked():
    with pytest.raises(ConfigError, match="velocity"):
        SimConfig(K=4, velocity_kmh=(10.0, 20.0)).resolve()


def test_per_ue_velocities_kept():
    cfg = SimConfig(K=3, velocity_kmh=(10.0, 20.0, 30.0)).resolve()
    assert cfg.velocities_kmh() == (10.0, 20.0, 30.0)


@given(t_m=st.floats(min_value=-5, max_value=5))
def test_t_m_range(t_m):
    cfg = SimConfig(t_m=t_m)
    if 0.0 <= t_m <= 1.0:
        assert cfg.resolve().t_m == t_m
    else:
        with pytest.raises(ConfigError):
            cfg.resolve()


def test_hash_stable_and_sensitive():
    a = SimConfig(seed=1)
    b = SimConfig(seed=1)
    c = SimConfig(seed=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment\n"
        "schema_version = 1\n"
        "M = 8\n"
        "K = 6\n"
        "L = 2\n"
        "velocity_kmh = 10, 20, 30, 40, 50, 60\n"
        "mode = sdma\n"
        "p_max_dbm = 27.5\n"
    )
    cfg = parse_config_file(path)
    assert cfg.M == 8 and cfg.K == 6
    assert cfg.mode is Mode.SDMA
    assert cfg.p_max_dbm == 27.5
    assert cfg.velocities_kmh() == (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("not_a_knob = 3\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_file(path)


def test_config_file_rejects_wrong_schema(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("schema_version = 99\n")
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config_file(path)
