"""Experiment presets, sweep orchestration and CSV/plot emission.

Three presets reproduce the headline studies: ``fig_a`` sweeps the UE count
against the cluster count with and without DL pilots, ``fig_b`` scans the
(cluster count, velocity) grid for rate splitting vs SDMA, and ``fig_c``
sweeps the resource-block length for several velocities.  ``custom`` sweeps
user-provided axes over a base config.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from cfrsma import __version__
from cfrsma.config import ConfigError, Mode, SimConfig
from cfrsma.link_sim import SeReport, run_modes

CSV_HEADER = ("mode,K,L,velocity_kmh,tau_c,drops,realizations,"
              "se_sum,se_sum_stderr,se_common,se_private")

# sweepable SimConfig fields
SWEEP_AXES = ("K", "L", "velocity_kmh", "tau_c", "M", "p_max_dbm")


@dataclass
class SweepSpec:
    """One sweep: a base config, axes with strictly increasing values, and
    the modes to compare at every grid point."""

    preset: str
    base: SimConfig
    axes: dict[str, tuple]
    modes: tuple[Mode, ...]
    plot_x: str | None = None         # axis drawn on the x axis
    plot_series: tuple[str, ...] = ()  # axes splitting the plot into lines

    def validate(self):
        if not self.modes:
            raise ConfigError("sweep needs at least one mode")
        for name, values in self.axes.items():
            if name not in SWEEP_AXES:
                raise ConfigError(f"cannot sweep '{name}'; choose from {SWEEP_AXES}")
            if len(values) == 0:
                raise ConfigError(f"axis '{name}' has no values")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"axis '{name}' values must be strictly increasing")


def preset_spec(name: str, drops: int | None = None, realizations: int | None = None,
                seed: int | None = None, modes: tuple[Mode, ...] | None = None,
                axes: dict[str, tuple] | None = None,
                base: SimConfig | None = None) -> SweepSpec:
    """Build one of the named sweeps, with optional overrides."""
    if base is None:
        base = SimConfig()
    overrides = {}
    if drops is not None:
        overrides["drops"] = drops
    if realizations is not None:
        overrides["realizations"] = realizations
    if seed is not None:
        overrides["seed"] = seed

    if name == "fig_a":
        base = replace(base, M=32, N=4, velocity_kmh=40.0, p_max_dbm=30.0,
                       tau_c=100, **overrides)
        spec = SweepSpec(
            preset=name, base=base,
            axes={"K": (8, 16, 24, 32), "L": (1, 4, 8)},
            modes=(Mode.RSMA_DL_PILOTS, Mode.RSMA_NO_DL_PILOTS),
            plot_x="K", plot_series=("L",))
    elif name == "fig_b":
        base = replace(base, M=16, N=4, K=16, p_max_dbm=30.0, tau_c=100,
                       **overrides)
        spec = SweepSpec(
            preset=name, base=base,
            axes={"L": (1, 2, 4, 8, 16), "velocity_kmh": (0.0, 50.0, 100.0, 150.0, 200.0)},
            modes=(Mode.RSMA_DL_PILOTS, Mode.SDMA),
            plot_x="velocity_kmh", plot_series=("L",))
    elif name == "fig_c":
        base = replace(base, M=16, N=4, K=24, L=8, p_max_dbm=30.0, **overrides)
        spec = SweepSpec(
            preset=name, base=base,
            axes={"tau_c": (25, 50, 100, 150, 200), "velocity_kmh": (20.0, 60.0, 100.0)},
            modes=(Mode.RSMA_DL_PILOTS, Mode.SDMA),
            plot_x="tau_c", plot_series=("velocity_kmh",))
    elif name == "custom":
        base = replace(base, **overrides)
        spec = SweepSpec(preset=name, base=base, axes=dict(axes or {}),
                         modes=modes or (base.mode,))
        if spec.axes:
            names = list(spec.axes)
            spec.plot_x = names[0]
            spec.plot_series = tuple(names[1:])
    else:
        raise ConfigError(f"unknown preset '{name}'")
    if modes is not None:
        spec.modes = tuple(modes)
    if axes:
        spec.axes.update(axes)
    spec.validate()
    return spec


def _mode_groups(modes) -> list[list[Mode]]:
    """Partition modes into frame-compatible groups that can share drops."""
    shared = [m for m in modes if m is not Mode.RSMA_NO_DL_PILOTS]
    groups = []
    if shared:
        groups.append(shared)
    if Mode.RSMA_NO_DL_PILOTS in modes:
        groups.append([Mode.RSMA_NO_DL_PILOTS])
    return groups


def run_sweep(spec: SweepSpec, threads: int = 1, log=None) -> list[dict]:
    """Execute every (grid point, mode) and return one row dict each."""
    spec.validate()
    axis_names = list(spec.axes)
    points = list(itertools.product(*(spec.axes[a] for a in axis_names))) or [()]
    rows = []
    for p_idx, values in enumerate(points):
        cfg = replace(spec.base, **dict(zip(axis_names, values)))
        for group in _mode_groups(spec.modes):
            if log:
                log(f"[{spec.preset}] point {p_idx + 1}/{len(points)} "
                    f"{dict(zip(axis_names, values))} modes={[m.value for m in group]}")
            reports = run_modes(cfg, group, threads=threads)
            for mode, rep in reports.items():
                resolved = replace(cfg, mode=mode).resolve()
                rows.append(_row(resolved, rep))
    rows.sort(key=lambda r: (r["mode"], r["K"], r["L"], r["velocity_kmh"], r["tau_c"]))
    return rows


def _row(cfg: SimConfig, rep: SeReport) -> dict:
    vels = cfg.velocities_kmh()
    return {
        "mode": rep.mode.value,
        "K": cfg.K,
        "L": cfg.L,
        "velocity_kmh": vels[0] if len(set(vels)) == 1 else float("nan"),
        "tau_c": cfg.tau_c,
        "drops": cfg.drops,
        "realizations": cfg.realizations,
        "se_sum": rep.se_sum,
        "se_sum_stderr": rep.se_sum_stderr,
        "se_common": rep.se_common_sum,
        "se_private": rep.se_private_sum,
    }


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv(rows: list[dict], path: Path) -> None:
    names = CSV_HEADER.split(",")
    lines = [CSV_HEADER]
    lines += [",".join(_fmt(row[n]) for n in names) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_manifest(spec: SweepSpec, rows: list[dict], path: Path,
                   wall_time_s: float, threads: int, seed: int) -> None:
    manifest = {
        "schema_version": 1,
        "version": __version__,
        "preset": spec.preset,
        "seed": seed,
        "drops": spec.base.drops,
        "realizations": spec.base.realizations,
        "modes": [m.value for m in spec.modes],
        "axes": {k: list(v) for k, v in spec.axes.items()},
        "base_config_hash": spec.base.config_hash(),
        "rows": len(rows),
        "threads": threads,
        "wall_time_s": round(wall_time_s, 3),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_plot(spec: SweepSpec, rows: list[dict], path: Path) -> None:
    """Line plot of sum SE over the sweep's x axis, one line per
    (mode, series values)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_name = spec.plot_x or (list(spec.axes)[0] if spec.axes else None)
    if x_name is None:
        return
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    series_names = [a for a in spec.plot_series if a in spec.axes]
    key_of = lambda row: (row["mode"],) + tuple(row[a] for a in series_names)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(key_of(row), []).append(row)
    for key in sorted(groups):
        pts = sorted(groups[key], key=lambda r: r[x_name])
        xs = [r[x_name] for r in pts]
        ys = [r["se_sum"] for r in pts]
        errs = [r["se_sum_stderr"] for r in pts]
        label = key[0] + "".join(f", {n}={v:g}" for n, v in zip(series_names, key[1:]))
        ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=2, label=label)
    ax.set_xlabel(x_name)
    ax.set_ylabel("sum SE [bit/s/Hz]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def run_and_save(spec: SweepSpec, output_dir: str | Path, threads: int = 1,
                 plot: bool = False, log=None) -> list[dict]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = run_sweep(spec, threads=threads, log=log)
    wall = time.perf_counter() - t0
    write_csv(rows, out / "results.csv")
    write_manifest(spec, rows, out / "meta.json", wall, threads, spec.base.seed)
    if plot:
        write_plot(spec, rows, out / f"{spec.preset}.svg")
    return rows
