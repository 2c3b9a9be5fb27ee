"""Input boxes, linear output constraints, and robustness property generation.

A property asks: for every x in the input box, does c^T N(x) + d >= 0 hold?
Conjunctions of output constraints are represented as several single-constraint
properties verified independently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from incver.model import Network, ParseError, _as_readonly, evaluate


@dataclass(frozen=True, eq=False)
class InputBox:
    """Axis-aligned box ``lower[i] <= x[i] <= upper[i]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = _as_readonly(self.lower)
        hi = _as_readonly(self.upper)
        if lo.ndim != 1 or hi.ndim != 1:
            raise ValueError("box bounds must be 1-d vectors")
        if lo.shape != hi.shape:
            raise ValueError(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"box dimension {bad}: lower {lo[bad]} > upper {hi[bad]}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, tol: float = 0.0) -> bool:
        v = np.asarray(x, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def corners(self):
        """Iterate all 2^dim corner points (use only for small dim)."""
        n = self.dim
        for mask in range(1 << n):
            yield np.where(
                [(mask >> i) & 1 for i in range(n)], self.upper, self.lower
            ).astype(float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InputBox):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(
            self.upper, other.upper
        )


@dataclass(frozen=True, eq=False)
class OutputConstraint:
    """Half-space constraint ``c^T y + d >= 0`` on the network output."""

    c: np.ndarray
    d: float = 0.0

    def __post_init__(self) -> None:
        c = _as_readonly(self.c)
        if c.ndim != 1:
            raise ValueError("constraint coefficients must be a 1-d vector")
        if not np.isfinite(c).all() or not np.isfinite(self.d):
            raise ValueError("constraint coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))

    def margin(self, y) -> float:
        return float(self.c @ np.asarray(y, dtype=float) + self.d)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OutputConstraint):
            return NotImplemented
        return np.array_equal(self.c, other.c) and self.d == other.d


@dataclass(frozen=True)
class Property:
    """A verification problem: input box plus one output constraint."""

    input: InputBox
    output: OutputConstraint
    name: str = ""


def robustness_property(
    x0,
    eps: float,
    true_label: int,
    adversary_label: int,
    data_range: tuple = (0.0, 1.0),
    clamp: bool = True,
    name: str = "",
) -> Property:
    """L-infinity local robustness: inside the eps-box around x0, the score of
    the true label stays at least the adversary's score.

    The box is clamped to ``data_range`` by default; pass ``clamp=False`` for
    an unclamped box.  Callers that record run metadata should note the
    clamping choice there.
    """
    x0 = np.asarray(x0, dtype=float)
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if true_label == adversary_label:
        raise ValueError(f"labels must differ, both are {true_label}")
    if true_label < 0 or adversary_label < 0:
        raise ValueError("labels must be non-negative output indices")
    lo = x0 - eps
    hi = x0 + eps
    if clamp:
        lo = np.maximum(lo, data_range[0])
        hi = np.minimum(hi, data_range[1])
    n_out = max(true_label, adversary_label) + 1
    c = np.zeros(n_out)
    c[true_label] = 1.0
    c[adversary_label] = -1.0
    if not name:
        name = f"robust_t{true_label}_a{adversary_label}_eps{eps:g}"
    return Property(InputBox(lo, hi), OutputConstraint(c, 0.0), name=name)


def holds_concretely(p: Property, net: Network, x) -> bool:
    """Evaluate the output constraint at the concrete point N(x)."""
    v = np.asarray(x, dtype=float)
    if not p.input.contains(v, tol=0.0):
        raise ValueError("point lies outside the property's input box")
    return p.output.margin(evaluate(net, v)) >= 0.0


def conjunction_verdict(verdicts) -> str:
    """Combine verdicts of independently verified conjuncts.

    Any counterexample falsifies the conjunction; all conjuncts verified
    proves it; otherwise the result is inconclusive (Timeout if any conjunct
    timed out, Unknown otherwise).
    """
    verdicts = list(verdicts)
    if not verdicts:
        raise ValueError("no verdicts to combine")
    if any(v == "Counterexample" for v in verdicts):
        return "Counterexample"
    if all(v == "Verified" for v in verdicts):
        return "Verified"
    if any(v == "Timeout" for v in verdicts):
        return "Timeout"
    return "Unknown"


def property_to_json(p: Property) -> dict:
    return {
        "name": p.name,
        "input": {"lower": p.input.lower.tolist(), "upper": p.input.upper.tolist()},
        "output": {"c": p.output.c.tolist(), "d": p.output.d},
    }


def property_from_json(obj: object, where: str = "property") -> Property:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    name = obj.get("name", "")
    if not isinstance(name, str):
        raise ParseError(f"{where}.name: expected a string")
    box = obj.get("input")
    if not isinstance(box, dict):
        raise ParseError(f"{where}.input: expected an object")
    out = obj.get("output")
    if not isinstance(out, dict):
        raise ParseError(f"{where}.output: expected an object")

    def _vector(parent, key, owner):
        v = parent.get(key)
        if not isinstance(v, list) or not all(isinstance(t, (int, float)) for t in v):
            raise ParseError(f"{owner}.{key}: expected a list of numbers")
        return np.array(v, dtype=float)

    lower = _vector(box, "lower", f"{where}.input")
    upper = _vector(box, "upper", f"{where}.input")
    c = _vector(out, "c", f"{where}.output")
    d = out.get("d", 0.0)
    if not isinstance(d, (int, float)):
        raise ParseError(f"{where}.output.d: expected a number")
    try:
        return Property(InputBox(lower, upper), OutputConstraint(c, float(d)), name=name)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def save_property(p: Property, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(property_to_json(p), fh, indent=1)
        fh.write("\n")


def load_property(path) -> Property:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return property_from_json(obj, where=str(path))
