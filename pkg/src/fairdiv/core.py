"""Instances, XOS valuations, bundles and instance (de)serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, SpecError

TOL = 1e-9
MASK_CAP = 63

Bundle = frozenset


def bundle(items: Iterable[int] = ()) -> frozenset:
    return frozenset(int(e) for e in items)


def to_mask(items: Iterable[int]) -> int:
    mask = 0
    for e in items:
        mask |= 1 << int(e)
    return mask


def from_mask(mask: int) -> frozenset:
    out = []
    e = 0
    while mask:
        if mask & 1:
            out.append(e)
        mask >>= 1
        e += 1
    return frozenset(out)


def mask_matrix(m: int) -> np.ndarray:
    """Row s is the 0/1 membership vector of subset mask s (all 2^m subsets)."""
    masks = np.arange(1 << m, dtype=np.int64)
    return ((masks[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(np.float64)


@dataclass(frozen=True)
class XOSValuation:
    """Maximum of additive clauses. ``clauses[k][e]`` is clause k's value for item e."""

    clauses: tuple

    def __post_init__(self):
        cl = tuple(tuple(float(x) for x in c) for c in self.clauses)
        if not cl:
            raise InputError("valuation needs at least one clause")
        width = len(cl[0])
        for k, c in enumerate(cl):
            if len(c) != width:
                raise InputError(f"clause {k} has length {len(c)}, expected {width}")
            for e, x in enumerate(c):
                if not math.isfinite(x) or x < 0:
                    raise InputError(f"clause {k} item {e}: value {x} must be finite and >= 0")
        object.__setattr__(self, "clauses", cl)

    @classmethod
    def additive(cls, values: Sequence[float]) -> "XOSValuation":
        return cls((tuple(values),))

    @property
    def m(self) -> int:
        return len(self.clauses[0])

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.clauses, dtype=np.float64).reshape(len(self.clauses), self.m)

    def value(self, S: Iterable[int]) -> float:
        return value(self, S)

    def item_max(self) -> np.ndarray:
        """Per-item maximum over clauses, i.e. v({e})."""
        return self.matrix.max(axis=0)

    def scaled(self, c: float) -> "XOSValuation":
        return XOSValuation(tuple(tuple(c * x for x in cl) for cl in self.clauses))

    def restricted(self, items: Sequence[int]) -> "XOSValuation":
        """Valuation over the sub-universe ``items`` (re-indexed 0..len-1)."""
        idx = list(items)
        return XOSValuation(tuple(tuple(cl[e] for e in idx) for cl in self.clauses))

    def all_values(self) -> np.ndarray:
        """v(S) for every subset mask S of [0, m). Only for small m."""
        if self.m > 24:
            raise InputError("subset table limited to m <= 24")
        best = np.zeros(1 << self.m)
        for row in self.matrix:
            # sums[mask] built by doubling: the upper half adds item e to the lower half
            sums = np.zeros(1)
            for x in row:
                sums = np.concatenate([sums, sums + x])
            np.maximum(best, sums, out=best)
        return best


def value(v: XOSValuation, S: Iterable[int]) -> float:
    idx = list(S)
    if not idx:
        return 0.0
    for e in idx:
        if not 0 <= e < v.m:
            raise InputError(f"item {e} out of range [0, {v.m})")
    return float(v.matrix[:, idx].sum(axis=1).max())


@dataclass(frozen=True)
class Instance:
    n: int
    m: int
    valuations: tuple

    def __post_init__(self):
        vals = tuple(self.valuations)
        if self.n < 1:
            raise InputError("n must be >= 1")
        if self.m < 0:
            raise InputError("m must be >= 0")
        if len(vals) != self.n:
            raise InputError(f"expected {self.n} valuations, got {len(vals)}")
        for i, v in enumerate(vals):
            if v.m != self.m:
                raise InputError(f"valuation {i} has width {v.m}, expected m={self.m}")
        object.__setattr__(self, "valuations", vals)

    @property
    def entitlement(self) -> float:
        return 1.0 / self.n

    def items(self) -> frozenset:
        return frozenset(range(self.m))


@dataclass
class Allocation:
    bundles: list
    achieved: list = field(default_factory=list)

    @classmethod
    def build(cls, inst: Instance, bundles: Sequence[Iterable[int]]) -> "Allocation":
        bs = [bundle(b) for b in bundles]
        check_disjoint(bs, inst.m)
        return cls(bs, [value(v, b) for v, b in zip(inst.valuations, bs)])

    def to_json(self) -> dict:
        return {"bundles": [sorted(b) for b in self.bundles], "achieved": list(self.achieved)}


def check_disjoint(bundles: Sequence[frozenset], m: int) -> None:
    from .errors import ValidationError

    seen: dict[int, int] = {}
    for i, b in enumerate(bundles):
        for e in b:
            if not 0 <= e < m:
                raise ValidationError(f"agent {i}: item {e} outside [0, {m})")
            if e in seen:
                raise ValidationError(f"item {e} given to agents {seen[e]} and {i}")
            seen[e] = i


# --- serialization -------------------------------------------------------


def instance_to_dict(inst: Instance) -> dict:
    return {"n": inst.n, "m": inst.m, "valuations": [[list(c) for c in v.clauses] for v in inst.valuations]}


def instance_from_dict(doc) -> Instance:
    if not isinstance(doc, dict):
        raise InputError("$: expected an object")
    for key in ("n", "m", "valuations"):
        if key not in doc:
            raise InputError(f"$.{key}: missing")
    n, m = doc["n"], doc["m"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InputError("$.n: expected integer >= 1")
    if not isinstance(m, int) or isinstance(m, bool) or m < 0:
        raise InputError("$.m: expected integer >= 0")
    vals = doc["valuations"]
    if not isinstance(vals, list) or len(vals) != n:
        raise InputError(f"$.valuations: expected list of {n} valuations")
    out = []
    for i, v in enumerate(vals):
        if not isinstance(v, list) or not v:
            raise InputError(f"$.valuations[{i}]: expected non-empty list of clauses")
        for k, c in enumerate(v):
            loc = f"$.valuations[{i}][{k}]"
            if not isinstance(c, list) or len(c) != m:
                raise InputError(f"{loc}: clause length must equal m={m}")
            for e, x in enumerate(c):
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    raise InputError(f"{loc}[{e}]: expected a number")
                if not math.isfinite(x) or x < 0:
                    raise InputError(f"{loc}[{e}]: value {x} must be finite and >= 0")
        out.append(XOSValuation(tuple(tuple(c) for c in v)))
    return Instance(n, m, tuple(out))


def save_instance(inst: Instance) -> bytes:
    return json.dumps(instance_to_dict(inst)).encode()


def load_instance(data: bytes | str) -> Instance:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return instance_from_dict(doc)


# --- generation ----------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    m: int
    clauses: tuple = (1, 1)
    value_range: tuple = (0.0, 1.0)
    big_fraction: float = 0.0
    big_alpha: float = 0.3
    distinct_big: bool = False
    overlap: float = 0.0
    identical: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown generator fields: {sorted(extra)}")
        kw = dict(doc)
        for key in ("clauses", "value_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def _big_value(row_max: np.ndarray, e: int, n: int, alpha: float) -> float:
    # APS <= (1/n) * sum_e max_k v_k(e); pick v(e) so it clears alpha times that bound.
    rest = float(row_max.sum() - row_max[e])
    return max(float(row_max[e]), 1.01 * alpha * rest / (n - alpha)) if n > alpha else float(row_max[e]) + 1.0


def generate_instance(spec: GeneratorSpec, seed: int) -> Instance:
    n, m = spec.n, spec.m
    lo_k, hi_k = spec.clauses
    lo_v, hi_v = spec.value_range
    if n < 1 or m < 0:
        raise SpecError("need n >= 1 and m >= 0")
    if not 1 <= lo_k <= hi_k:
        raise SpecError(f"bad clause range {spec.clauses}")
    if not 0 <= lo_v <= hi_v:
        raise SpecError(f"bad value range {spec.value_range}")
    if not 0.0 <= spec.big_fraction <= 1.0 or not 0.0 <= spec.overlap <= 1.0:
        raise SpecError("big_fraction and overlap must lie in [0, 1]")
    n_big = int(round(spec.big_fraction * n))
    if n_big and m == 0:
        raise SpecError("big items requested but m = 0")
    if spec.distinct_big and n_big > m:
        raise SpecError(f"{n_big} distinct big items need m >= {n_big}, got m={m}")

    rng = np.random.default_rng(seed)
    base = rng.uniform(lo_v, hi_v, size=m)

    def draw() -> np.ndarray:
        k = int(rng.integers(lo_k, hi_k + 1))
        fresh = rng.uniform(lo_v, hi_v, size=(k, m))
        return (1.0 - spec.overlap) * fresh + spec.overlap * base

    shared = draw() if spec.identical else None
    big_agents = set(rng.permutation(n)[:n_big].tolist())
    big_items = rng.permutation(m)[:n_big].tolist() if spec.distinct_big else None
    vals = []
    for i in range(n):
        mat = shared.copy() if spec.identical else draw()
        if i in big_agents:
            e = big_items.pop() if big_items is not None else int(rng.integers(m))
            mat[:, e] = _big_value(mat.max(axis=0), e, n, spec.big_alpha)
        vals.append(XOSValuation(tuple(tuple(r) for r in mat.tolist())))
    return Instance(n, m, tuple(vals))
