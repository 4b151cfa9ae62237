"""CSV and JSON round-trips for configurations, measures and run artifacts.

CSV conventions: configurations use the header ``x0,x1[,x2]`` with one point
per row and 17 significant digits, so identical states serialize to identical
bytes.  Measures pair a node/density/zeta CSV with a small JSON sidecar
(Robin constant, grid spec, solver diagnostics).
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from pathlib import Path

import numpy as np

from .core import Configuration
from .equilibrium import EquilibriumMeasure

__all__ = [
    "format_float",
    "write_csv",
    "configuration_to_csv",
    "configuration_from_csv",
    "measure_to_csv",
    "measure_sidecar",
    "save_measure",
    "load_configuration",
    "save_configuration",
    "RunManifest",
]


def format_float(x: float) -> str:
    """17 significant digits: round-trips doubles exactly."""
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, float)
                              else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def configuration_to_csv(config: Configuration) -> str:
    header = ",".join(f"x{i}" for i in range(config.d))
    lines = [header]
    for p in config.points:
        lines.append(",".join(format_float(v) for v in p))
    return "\n".join(lines) + "\n"


def configuration_from_csv(text: str) -> Configuration:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split(",")
    if not all(h.strip() == f"x{i}" for i, h in enumerate(header)):
        raise ValueError(f"unexpected configuration header: {lines[0]!r}")
    d = len(header)
    pts = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return Configuration(d, pts)


def save_configuration(config: Configuration, path) -> Path:
    path = Path(path)
    path.write_text(configuration_to_csv(config))
    return path


def load_configuration(path) -> Configuration:
    return configuration_from_csv(Path(path).read_text())


def measure_to_csv(mu: EquilibriumMeasure, zeta_values=None) -> str:
    d = mu.d
    header = [f"x{i}" for i in range(d)] + ["density"]
    if zeta_values is not None:
        header.append("zeta")
    nodes = mu.grid.nodes()
    dens = mu.density.ravel()
    zeta = zeta_values.ravel() if zeta_values is not None else None
    lines = [",".join(header)]
    for i in range(nodes.shape[0]):
        row = [format_float(v) for v in nodes[i]] + [format_float(dens[i])]
        if zeta is not None:
            row.append(format_float(zeta[i]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def measure_sidecar(mu: EquilibriumMeasure) -> dict:
    info = {k: v for k, v in mu.solver_info.items() if not k.startswith("_")}
    return {
        "robin_constant": mu.robin_constant,
        "mass": mu.mass(),
        "grid": {"d": mu.grid.d, "lo": list(mu.grid.lo), "h": mu.grid.h,
                 "shape": list(mu.grid.shape)},
        "radial": None if mu.radial is None else {
            "radius": mu.radial.radius,
            "robin_constant": mu.radial.robin_constant,
            "center": mu.radial.center.tolist(),
        },
        "solver_info": info,
    }


def save_measure(mu: EquilibriumMeasure, csv_path, zeta_values=None) -> tuple:
    csv_path = Path(csv_path)
    csv_path.write_text(measure_to_csv(mu, zeta_values))
    sidecar_path = csv_path.with_suffix(".json")
    sidecar_path.write_text(json.dumps(measure_sidecar(mu), indent=2,
                                       sort_keys=True) + "\n")
    return csv_path, sidecar_path


class RunManifest:
    """Reproducibility record written next to every pipeline's outputs."""

    def __init__(self, spec: dict, spec_text: str, seed):
        self.data = {
            "spec": spec,
            "spec_sha256": hashlib.sha256(spec_text.encode()).hexdigest(),
            "seed": seed,
            "versions": _versions(),
            "started_unix": time.time(),
            "outputs": [],
        }

    def add_output(self, path):
        self.data["outputs"].append(str(path))

    def finish(self, path) -> Path:
        self.data["wall_time_s"] = time.time() - self.data["started_unix"]
        path = Path(path)
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")
        return path


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "coulombgas": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
