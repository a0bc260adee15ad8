"""Study configuration and the built-in benchmark presets."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

METHODS = ("standard", "high-order")


@dataclass
class StudyConfig:
    """Parameters of one convergence study.

    ``h_list`` must be strictly decreasing and ``N_list`` strictly
    increasing.  The run at ``(ref_N, ref_h)`` serves as the exact solution.
    With ``ref_N``/``ref_h`` unset the reference is the last ``N`` and last
    ``h`` of the lists, and that cell is excluded from the table.
    """

    name: str = "study"
    surface: str = "f1"
    perturbation: str | None = "p1"
    k: float = 1.0
    alpha: float = 0.3
    period: float = 2 * math.pi
    H: float = 4.0
    H0: float = 3.9
    method: str = "standard"
    reparam: str = "g1"
    h_list: list[float] = field(default_factory=lambda: [0.16, 0.08, 0.04])
    N_list: list[int] = field(default_factory=lambda: [20, 40, 80])
    J: int | None = None
    ref_N: int | None = 160
    ref_h: float | None = 0.02
    memory_mb: float = 2700.0
    csv: str | None = None
    json: str | None = None

    def __post_init__(self):
        self.h_list = [float(h) for h in self.h_list]
        self.N_list = [int(n) for n in self.N_list]
        self.validate()

    def validate(self) -> None:
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not abs(self.alpha) < self.k:
            raise ValueError("need |alpha| < k")
        if not self.H0 < self.H:
            raise ValueError("need H0 < H")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.h_list or not self.N_list:
            raise ValueError("h_list and N_list must be nonempty")
        if any(a <= b for a, b in zip(self.h_list, self.h_list[1:])):
            raise ValueError("h_list must be strictly decreasing")
        if any(a >= b for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("N_list must be strictly increasing")
        if min(self.h_list) <= 0 or min(self.N_list) < 1:
            raise ValueError("mesh widths and N must be positive")

    @property
    def reference(self) -> tuple[int, float]:
        N = self.N_list[-1] if self.ref_N is None else self.ref_N
        h = self.h_list[-1] if self.ref_h is None else self.ref_h
        return N, h

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("k", "alpha", "period"):
            if isinstance(data.get(key), str):
                data[key] = parse_number(data[key])
        return cls(**data)


def parse_number(text: str) -> float:
    """Numbers such as ``"sqrt(10)"``, ``"2*pi"`` or ``"-0.5"``."""
    allowed = {"sqrt": math.sqrt, "pi": math.pi}
    try:
        return float(text)
    except ValueError:
        pass
    if not set(text) <= set("0123456789.+-*/() eEsqrtpi"):
        raise ValueError(f"cannot parse number {text!r}")
    return float(eval(text, {"__builtins__": {}}, allowed))  # noqa: S307 (restricted)


def load_config(path: str | Path) -> StudyConfig:
    """Read a YAML or JSON config file (YAML is a superset of JSON)."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    return StudyConfig.from_dict(data)


def dump_config(config: StudyConfig, path: str | Path) -> None:
    path = Path(path)
    data = config.to_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(data, indent=2) + "\n")
    else:
        path.write_text(yaml.safe_dump(data, sort_keys=False))


# benchmark scatterers; example 3 of the high-order set uses k = sqrt(5)
EXAMPLES = {
    1: dict(surface="f1", perturbation="p1", k=1.0, alpha=0.3),
    2: dict(surface="f1", perturbation="p1", k=math.sqrt(10), alpha=0.5),
    3: dict(surface="f2", perturbation="p2", k=5.0, alpha=-0.5),
    4: dict(surface="f2", perturbation="p2", k=10.0, alpha=math.sqrt(2)),
}
HIGH_ORDER_EXAMPLES = {**EXAMPLES, 3: dict(EXAMPLES[3], k=math.sqrt(5))}


def preset(example: int, method: str = "standard", reparam: str = "g1", **overrides) -> StudyConfig:
    """Desk-scale configuration for one of the four benchmark examples."""
    table = EXAMPLES if method == "standard" else HIGH_ORDER_EXAMPLES
    base = dict(table[example], name=f"example{example}-{method}", method=method)
    if method == "standard":
        base.update(h_list=[0.16, 0.08, 0.04], N_list=[20, 40, 80], ref_N=160, ref_h=0.02)
    else:
        base.update(reparam=reparam, h_list=[0.08], N_list=[4, 8, 16, 32], ref_N=64, ref_h=0.08)
    base.update(overrides)
    return StudyConfig(**base)
