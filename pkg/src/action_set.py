"""
The set of permissible recourse actions.

Per-column intervals [lower, upper] derived from actionability,
monotonicity and delta_max, plus optional affine constraints
a . delta + b >= 0.
"""
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .data import DatasetBundle, FeatureSpec
from .errors import ConfigError, InvalidActionSetError, ShapeError, UnsupportedProjectionError

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class AffineConstraint:
    """coeffs . delta + offset >= 0"""
    coeffs: np.ndarray
    offset: float


@dataclass(frozen=True)
class ActionSet:
    lower: np.ndarray
    upper: np.ndarray
    delta_max: float
    constraints: Tuple[AffineConstraint, ...] = ()
    columns: Tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_box(self) -> bool:
        return not self.constraints

    @property
    def actionable(self) -> np.ndarray:
        """Columns the action may move"""
        return (self.lower < 0) | (self.upper > 0)


def _bounds(spec: FeatureSpec, delta_max: float) -> Tuple[float, float]:
    if not spec.actionable or spec.kind == "categorical":
        return 0.0, 0.0
    lower = 0.0 if spec.monotonicity == "increase-only" else -delta_max
    upper = 0.0 if spec.monotonicity == "decrease-only" else delta_max
    return lower, upper


def build_action_set(
    specs: Sequence[FeatureSpec],
    delta_max: float = 0.75,
    extras: Iterable[AffineConstraint] = (),
) -> ActionSet:
    """
    Assemble the action set for one column per spec.
    Non-actionable columns get [0, 0], increase-only [0, delta_max],
    decrease-only [-delta_max, 0], free [-delta_max, delta_max].
    """
    if not delta_max > 0:
        raise InvalidActionSetError(f"delta_max must be > 0, got {delta_max}")
    bounds = np.array([_bounds(spec, delta_max) for spec in specs], dtype=float).reshape(-1, 2)
    constraints = []
    for extra in extras:
        coeffs = np.asarray(extra.coeffs, dtype=float)
        if coeffs.shape != (len(specs),):
            raise ShapeError(f"constraint has {coeffs.shape} coefficients for {len(specs)} columns")
        if not extra.offset >= 0:
            raise InvalidActionSetError(
                f"constraint with offset {extra.offset} excludes the zero action"
            )
        constraints.append(AffineConstraint(coeffs=coeffs, offset=float(extra.offset)))

    lower, upper = bounds[:, 0].copy(), bounds[:, 1].copy()
    lower.setflags(write=False)
    upper.setflags(write=False)
    return ActionSet(
        lower=lower,
        upper=upper,
        delta_max=float(delta_max),
        constraints=tuple(constraints),
        columns=tuple(spec.name for spec in specs),
    )


def constraints_from_config(entries: Iterable[Dict[str, Any]], columns: Sequence[str]) -> Tuple[AffineConstraint, ...]:
    """Map config entries {"coefficients": {column: value}, "offset": b} onto column vectors"""
    index = {name: i for i, name in enumerate(columns)}
    constraints = []
    for entry in entries:
        coeffs = np.zeros(len(columns))
        for name, value in entry.get("coefficients", {}).items():
            if name not in index:
                raise ConfigError(f"constraint refers to unknown column {name!r}")
            coeffs[index[name]] = float(value)
        constraints.append(AffineConstraint(coeffs=coeffs, offset=float(entry.get("offset", 0.0))))
    return tuple(constraints)


def action_set_for_bundle(bundle: DatasetBundle, delta_max: Optional[float] = None) -> ActionSet:
    """Action set described by the bundle's dataset config"""
    config = bundle.config
    if delta_max is None:
        delta_max = config.delta_max if config is not None else 0.75
    entries = config.constraints if config is not None else ()
    extras = constraints_from_config(entries, bundle.columns)
    return build_action_set(bundle.column_specs, delta_max, extras)


def _check_dim(aset: ActionSet, delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (aset.dim,):
        raise ShapeError(f"action of shape {delta.shape} for an action set of dimension {aset.dim}")
    return delta


def contains(aset: ActionSet, delta: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    delta = _check_dim(aset, delta)
    if np.any(delta < aset.lower - tol) or np.any(delta > aset.upper + tol):
        return False
    return all(float(c.coeffs @ delta) + c.offset >= -tol for c in aset.constraints)


def project_box(aset: ActionSet, delta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the box; only defined for box-only sets"""
    if not aset.is_box:
        raise UnsupportedProjectionError("projection is only supported for action sets without affine constraints")
    return np.clip(_check_dim(aset, delta), aset.lower, aset.upper)
