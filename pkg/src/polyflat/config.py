"""Experiment configuration: one JSON document fully determines a run.

Validation is strict and reports the offending field path, so a bad config
fails fast with exit status 2 in the CLI rather than deep inside a solve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"config.{field_path}: {message}")
        self.field_path = field_path


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _as_positive(value, path: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise ConfigError(path, f"expected a positive finite number, got {v}")
    return v


@dataclass
class OperatorSpec:
    kind: str                 # "polyharmonic" | "file"
    m: int = 1
    path: str | None = None

    @classmethod
    def parse(cls, doc, path="operator"):
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        if "polyharmonic" in doc:
            m = doc["polyharmonic"].get("m", 1) if isinstance(doc["polyharmonic"], dict) else doc["polyharmonic"]
            if not isinstance(m, int) or m < 1:
                raise ConfigError(f"{path}.polyharmonic.m", f"expected integer >= 1, got {m!r}")
            return cls(kind="polyharmonic", m=m)
        if "file" in doc:
            return cls(kind="file", path=str(doc["file"]))
        raise ConfigError(path, 'expected "polyharmonic" or "file"')


@dataclass
class DomainSpec:
    generator: str
    params: dict = field(default_factory=dict)

    KNOWN = ("half_space_ball", "cone", "koch", "ball", "box", "file")

    @classmethod
    def parse(cls, doc, path="domain"):
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        gen = _need(doc, "generator", path)
        if gen not in cls.KNOWN:
            raise ConfigError(f"{path}.generator", f"unknown generator {gen!r}; known: {cls.KNOWN}")
        params = {k: v for k, v in doc.items() if k != "generator"}
        return cls(generator=gen, params=params)


@dataclass
class FieldSpec:
    """Where the analyzed grid function comes from: a solve, an expression,
    or a previously saved raster."""

    kind: str                  # "solve" | "expression" | "file"
    expression: str | None = None
    path: str | None = None

    @classmethod
    def parse(cls, doc, path="field"):
        if doc is None or doc == "solve" or doc == {"solve": True}:
            return cls(kind="solve")
        if isinstance(doc, dict):
            if "expression" in doc:
                return cls(kind="expression", expression=str(doc["expression"]))
            if "file" in doc:
                return cls(kind="file", path=str(doc["file"]))
            if doc.get("solve"):
                return cls(kind="solve")
        raise ConfigError(path, 'expected "solve", {"expression": ...} or {"file": ...}')


@dataclass
class SourceSpec:
    kind: str                  # "constant" | "expression" | "file"
    constant: float = 0.0
    expression: str | None = None
    path: str | None = None

    @classmethod
    def parse(cls, doc, path="source"):
        if isinstance(doc, (int, float)):
            return cls(kind="constant", constant=float(doc))
        if isinstance(doc, dict):
            if "constant" in doc:
                return cls(kind="constant", constant=float(doc["constant"]))
            if "expression" in doc:
                return cls(kind="expression", expression=str(doc["expression"]))
            if "file" in doc:
                return cls(kind="file", path=str(doc["file"]))
        raise ConfigError(path, "expected a number, {'constant'|'expression'|'file': ...}")


@dataclass
class LadderSpec:
    R: float
    a: float = 0.5
    k_max: int = 5

    @classmethod
    def parse(cls, doc, path="analysis.ladder"):
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        R = _as_positive(_need(doc, "R", path), f"{path}.R")
        a = float(doc.get("a", 0.5))
        if not 0.0 < a < 1.0:
            raise ConfigError(f"{path}.a", f"ladder ratio must lie in (0,1), got {a}")
        k_max = int(doc.get("k_max", 5))
        if k_max < 2:
            raise ConfigError(f"{path}.k_max", "need at least 2 steps")
        return cls(R=R, a=a, k_max=k_max)


@dataclass
class AnalysisSpec:
    ladder: LadderSpec | None = None
    n_centers: int = 16
    center_offset_cells: float = 0.0
    restrict_to_mask: bool = False
    centers: list | None = None
    metric: str = "euclidean"
    pair_budget: int = 200_000
    min_sep: float | None = None
    max_sep: float | None = None
    region_center: list | None = None
    region_radius: float | None = None
    derivative_axes: list | None = None
    campanato_lambda: float | None = None
    radii: list | None = None            # flatness scan radii

    @classmethod
    def parse(cls, doc, path="analysis"):
        if doc is None:
            return cls()
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        out = cls()
        if "ladder" in doc:
            out.ladder = LadderSpec.parse(doc["ladder"], f"{path}.ladder")
        out.n_centers = int(doc.get("n_centers", 16))
        out.center_offset_cells = float(doc.get("center_offset_cells", 0.0))
        out.restrict_to_mask = bool(doc.get("restrict_to_mask", False))
        out.centers = doc.get("centers")
        out.metric = str(doc.get("metric", "euclidean"))
        if out.metric not in ("euclidean", "weighted"):
            raise ConfigError(f"{path}.metric", f"unknown metric {out.metric!r}")
        out.pair_budget = int(doc.get("pair_budget", 200_000))
        out.min_sep = None if "min_sep" not in doc else float(doc["min_sep"])
        out.max_sep = None if "max_sep" not in doc else float(doc["max_sep"])
        out.region_center = doc.get("region_center")
        out.region_radius = None if "region_radius" not in doc else float(doc["region_radius"])
        out.derivative_axes = doc.get("derivative_axes")
        out.campanato_lambda = None if "campanato_lambda" not in doc else float(doc["campanato_lambda"])
        out.radii = doc.get("radii")
        return out


@dataclass
class SolverSpec:
    tol: float = 1e-9
    max_iter: int | None = None

    @classmethod
    def parse(cls, doc, path="solver"):
        if doc is None:
            return cls()
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        tol = float(doc.get("tol", 1e-9))
        if not 0 < tol < 1:
            raise ConfigError(f"{path}.tol", f"tolerance must lie in (0,1), got {tol}")
        max_iter = doc.get("max_iter")
        if max_iter is not None:
            max_iter = int(max_iter)
            if max_iter < 1:
                raise ConfigError(f"{path}.max_iter", "must be >= 1")
        return cls(tol=tol, max_iter=max_iter)


@dataclass
class ExperimentConfig:
    operator: OperatorSpec
    domain: DomainSpec
    h: float
    source: SourceSpec
    field: FieldSpec
    analysis: AnalysisSpec
    solver: SolverSpec
    seed: int = 0
    label: str = "experiment"

    @classmethod
    def parse(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("", "top-level config must be an object")
        return cls(
            operator=OperatorSpec.parse(_need(doc, "operator", "")),
            domain=DomainSpec.parse(_need(doc, "domain", "")),
            h=_as_positive(_need(doc, "h", ""), "h"),
            source=SourceSpec.parse(doc.get("source", 0.0)),
            field=FieldSpec.parse(doc.get("field")),
            analysis=AnalysisSpec.parse(doc.get("analysis")),
            solver=SolverSpec.parse(doc.get("solver")),
            seed=int(doc.get("seed", 0)),
            label=str(doc.get("label", "experiment")),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("", f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("", f"invalid JSON: {e}") from None
        return cls.parse(doc)
