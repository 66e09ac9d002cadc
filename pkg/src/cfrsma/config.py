"""Simulation configuration: every scalar knob of the system plus trial
counts, seeding and the transmission mode."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path


CONFIG_SCHEMA_VERSION = 1

SPEED_OF_LIGHT = 299792458.0


class ConfigError(ValueError):
    """Raised when a configuration violates a structural constraint."""


class Mode(str, Enum):
    """Downlink transmission / decoding variants.

    RSMA_DL_PILOTS   -- rate splitting, UEs estimate effective DL channels
                        from precoded DL pilots and use them for SIC.
    RSMA_NO_DL_PILOTS -- rate splitting, no DL training phase; UEs fall back
                        to the statistical mean of the effective channels.
    SDMA             -- private streams only (power split forced to 1);
                        identical frame structure to RSMA_DL_PILOTS.
    """

    RSMA_DL_PILOTS = "rsma_dl_pilots"
    RSMA_NO_DL_PILOTS = "rsma_no_dl_pilots"
    SDMA = "sdma"


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SimConfig:
    """All knobs of one simulation run.

    Frame-structure fields left as None are resolved by :meth:`resolve`:
    tau_u defaults to the largest cluster UE count ceil(K / L), tau_dc to
    the cluster count L (one common-pilot instant per cluster), tau_dp to
    tau_u (DL private pilots reuse the UL pilot schedule).  In mode
    RSMA_NO_DL_PILOTS both DL training phases collapse to zero.
    """

    # geometry / network size
    area_side: float = 1000.0          # coverage square side [m]
    M: int = 16                        # AP count
    N: int = 4                         # antennas per AP
    K: int = 8                         # UE count
    L: int = 2                         # cluster count
    ap_height: float = 10.0            # AP height folded into distances [m]

    # frame structure [symbols]
    tau_c: int = 100
    tau_u: int | None = None
    tau_dc: int | None = None
    tau_dp: int | None = None

    # radio parameters
    bandwidth_hz: float = 20e6
    p_max_dbm: float = 30.0            # per-AP DL transmit power
    ul_pilot_dbm: float = 30.0
    noise_dbm: float = -94.0
    t_m: float = 0.05                  # private-power split factor in [0, 1]
    asd_deg: float = 30.0              # angular standard deviation
    carrier_hz: float = 2e9
    # one OFDM symbol at 60 kHz subcarrier spacing; together with carrier_hz
    # this sets the aging severity f_d * T_s that the block-length and
    # velocity studies are calibrated around
    sample_time_s: float = 1.0 / 60e3
    velocity_kmh: float | tuple[float, ...] = 40.0   # scalar or per UE

    # large-scale laws (overridable): beta_dB = pl_const_db - pl_slope_db*log10(d),
    # rician K = 10 ** (ric_intercept - ric_slope_per_m * d); the default
    # Rician profile is scatter-dominated (K < 1 beyond ~100 m), the regime
    # where downlink training actually matters
    pl_const_db: float = -30.5
    pl_slope_db: float = 36.7
    ric_intercept: float = 0.0
    ric_slope_per_m: float = 0.01

    # trials
    drops: int = 50
    realizations: int = 100
    seed: int = 1
    mode: Mode = Mode.RSMA_DL_PILOTS

    # --- derived helpers -------------------------------------------------
    @property
    def p_max_w(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def ul_pilot_w(self) -> float:
        return dbm_to_watt(self.ul_pilot_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    @property
    def tau_d(self) -> int:
        if self.tau_dc is None or self.tau_dp is None:
            raise ConfigError("frame structure unresolved; call resolve() first")
        return self.tau_dc + self.tau_dp

    @property
    def lambda_instant(self) -> int:
        """CSI anchor instant: first instant of the data phase."""
        return self.tau_u + self.tau_d + 1

    @property
    def data_instants(self) -> range:
        return range(self.lambda_instant, self.tau_c + 1)

    def velocities_kmh(self) -> tuple[float, ...]:
        v = self.velocity_kmh
        if isinstance(v, (int, float)):
            return (float(v),) * self.K
        if len(v) != self.K:
            raise ConfigError(f"velocity_kmh has {len(v)} entries, expected K={self.K}")
        return tuple(float(x) for x in v)

    def doppler_hz(self) -> tuple[float, ...]:
        return tuple(v / 3.6 * self.carrier_hz / SPEED_OF_LIGHT for v in self.velocities_kmh())

    # --- resolution / validation ----------------------------------------
    def resolve(self) -> "SimConfig":
        """Return a validated copy with all frame fields filled in."""
        cfg = replace(self)
        if not isinstance(cfg.mode, Mode):
            cfg.mode = Mode(str(cfg.mode))
        for name in ("M", "N", "K", "L", "tau_c", "drops", "realizations"):
            if getattr(cfg, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
        if cfg.L > min(cfg.M, cfg.K):
            raise ConfigError(f"L={cfg.L} exceeds min(M, K)={min(cfg.M, cfg.K)}")
        if cfg.mode is Mode.SDMA:
            cfg.t_m = 1.0
        if not 0.0 <= cfg.t_m <= 1.0:
            raise ConfigError(f"t_m must lie in [0, 1], got {cfg.t_m}")
        if cfg.area_side <= 0:
            raise ConfigError("area_side must be positive")

        max_cluster = -(-cfg.K // cfg.L)  # ceil(K / L): balanced clustering bound
        if cfg.tau_u is None:
            cfg.tau_u = max_cluster
        if cfg.tau_u < max_cluster:
            raise ConfigError(
                f"tau_u={cfg.tau_u} below pilot capacity: largest cluster holds "
                f"{max_cluster} UEs and needs that many orthogonal pilot slots"
            )
        if cfg.mode is Mode.RSMA_NO_DL_PILOTS:
            for nm in ("tau_dc", "tau_dp"):
                val = getattr(cfg, nm)
                if val not in (None, 0):
                    raise ConfigError(f"{nm}={val} but mode {cfg.mode.value} has no DL training")
            cfg.tau_dc = 0
            cfg.tau_dp = 0
        else:
            if cfg.tau_dc is None:
                cfg.tau_dc = cfg.L
            elif cfg.tau_dc != cfg.L:
                raise ConfigError(
                    f"tau_dc={cfg.tau_dc} but the common training phase spans one "
                    f"instant per cluster (L={cfg.L})"
                )
            if cfg.tau_dp is None:
                cfg.tau_dp = cfg.tau_u
            elif cfg.tau_dp < cfg.tau_u:
                raise ConfigError(
                    f"tau_dp={cfg.tau_dp} cannot cover the {cfg.tau_u} UL pilot slots "
                    "reused for DL private training"
                )
        if cfg.tau_u + cfg.tau_dc + cfg.tau_dp >= cfg.tau_c:
            raise ConfigError(
                f"no data phase left: tau_u+tau_dc+tau_dp="
                f"{cfg.tau_u + cfg.tau_dc + cfg.tau_dp} >= tau_c={cfg.tau_c}"
            )
        vels = cfg.velocities_kmh()
        if any(v < 0 for v in vels):
            raise ConfigError("velocities must be non-negative")
        cfg.velocity_kmh = vels if len(set(vels)) > 1 else vels[0]
        return cfg

    # --- serialization ----------------------------------------------------
    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Mode):
                v = v.value
            out[f.name] = v
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key == "schema_version":
                if int(raw) != CONFIG_SCHEMA_VERSION:
                    raise ConfigError(f"unsupported schema_version {raw}")
                continue
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)

    def config_hash(self) -> str:
        lines = [f"schema_version={CONFIG_SCHEMA_VERSION}"]
        for key, v in sorted(self.to_mapping().items()):
            lines.append(f"{key}={v!r}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _coerce(key: str, raw):
    """Coerce a raw (possibly string) value from a config file to field type."""
    if key == "mode":
        return Mode(str(raw).strip().lower())
    if key == "velocity_kmh":
        if isinstance(raw, str):
            parts = [p for p in raw.replace(",", " ").split() if p]
            vals = tuple(float(p) for p in parts)
            return vals[0] if len(vals) == 1 else vals
        if isinstance(raw, (list, tuple)):
            return tuple(float(x) for x in raw)
        return float(raw)
    int_fields = {"M", "N", "K", "L", "tau_c", "tau_u", "tau_dc", "tau_dp",
                  "drops", "realizations", "seed"}
    if key in int_fields:
        if raw is None or (isinstance(raw, str) and raw.strip().lower() == "none"):
            return None
        return int(raw)
    return float(raw)


def parse_config_file(path: str | Path) -> SimConfig:
    """Parse a flat ``key = value`` text config file.

    Lines starting with '#' and blank lines are skipped.  A
    ``schema_version`` line, when present, must match the supported version.
    """
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
        key, _, value = stripped.partition("=")
        mapping[key.strip()] = value.strip()
    return SimConfig.from_mapping(mapping)
