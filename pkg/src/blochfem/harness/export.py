"""CSV/JSON export of error tables and field samples."""

from __future__ import annotations

import csv
import io
import json
import subprocess
from pathlib import Path
from typing import Callable

import numpy as np

from ..mesh import PeriodicCellMesh
from .config import StudyConfig
from .study import ErrorTable

FIELD_HEADER = ("x1", "x2", "re", "im", "abs")


def table_csv(table: ErrorTable) -> str:
    """Row-major CSV text with header ``N,h,err``; floats use ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "h", "err"])
    for N, h, err in table.rows():
        w.writerow([N, repr(float(h)), repr(err)])
    return buf.getvalue()


def write_csv(table: ErrorTable, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(table_csv(table))
    return path


def read_csv(path: str | Path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != ["N", "h", "err"]:
            raise ValueError("not an error-table CSV")
        return [(int(N), float(h), float(e)) for N, h, e in r]


def git_describe(cwd: str | Path | None = None) -> str:
    """``git describe --always --dirty`` of the source tree, or ``"unknown"``."""
    cwd = Path(cwd) if cwd else Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=cwd,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def table_to_dict(table: ErrorTable, config: StudyConfig | None = None,
                  build: str | None = None) -> dict:
    return {
        "build": git_describe() if build is None else build,
        "config": None if config is None else config.to_dict(),
        "table": {
            "N": [int(n) for n in table.N],
            "h": [float(h) for h in table.h],
            "errors": table.errors.tolist(),
            "reference": [int(table.reference[0]), float(table.reference[1])],
            "is_reference": table.is_reference.tolist(),
            "orders": table.orders(),
        },
    }


def write_json(table: ErrorTable, path: str | Path, config: StudyConfig | None = None,
               build: str | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(table_to_dict(table, config, build), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: str | Path) -> tuple[ErrorTable, StudyConfig | None, str]:
    """Inverse of :func:`write_json`: ``(table, config, build)``."""
    data = json.loads(Path(path).read_text())
    t = data["table"]
    table = ErrorTable(t["N"], t["h"], np.array(t["errors"], dtype=float).reshape(len(t["N"]), len(t["h"])),
                       (t["reference"][0], t["reference"][1]),
                       np.array(t["is_reference"], dtype=bool).reshape(len(t["N"]), len(t["h"])))
    config = None if data.get("config") is None else StudyConfig.from_dict(data["config"])
    return table, config, data.get("build", "unknown")


def sample_function(fn: Callable, x1, x2) -> np.ndarray:
    """``(x1, x2, Re u, Im u, |u|)`` rows of ``fn`` on the tensor grid ``x1 x x2``."""
    X1, X2 = np.meshgrid(np.asarray(x1, float), np.asarray(x2, float), indexing="ij")
    u = np.asarray(fn(X1, X2), dtype=complex)
    return _rows(X1.ravel(), X2.ravel(), u.ravel())


def sample_nodal(mesh: PeriodicCellMesh, values, cell: int = 0) -> np.ndarray:
    """Rows for nodal values of a P1 field on one periodic cell."""
    values = np.asarray(values, dtype=complex)
    if values.shape != (mesh.n_nodes,):
        raise ValueError("need one value per mesh node")
    x = mesh.nodes
    return _rows(x[:, 0] + cell * mesh.period, x[:, 1], values)


def _rows(x1, x2, u) -> np.ndarray:
    return np.column_stack([x1, x2, u.real, u.imag, np.abs(u)])


def write_samples(samples: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_HEADER)
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
    return path
