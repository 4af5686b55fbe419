"""Greedy allocation for identical valuations over an APS-normalized partition."""
from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import TOL
from .errors import ExhaustedError, InputError
from .shares import NormalizedValuation

CLASSES = ("a", "2a", "3a", "1")
CLASS_WEIGHT = {"a": 0.0, "2a": 1.0, "3a": 1.5, "1": 2.0}


@dataclass
class GreedyState:
    nv: NormalizedValuation
    remaining: np.ndarray
    round: int = 1

    @classmethod
    def start(cls, nv: NormalizedValuation, items=None) -> "GreedyState":
        rem = np.zeros(nv.m)
        rem[list(range(nv.m)) if items is None else list(items)] = 1.0
        return cls(nv, rem)

    @property
    def beta(self) -> float:
        return self.nv.beta(self.remaining)

    def bundle_values(self) -> np.ndarray:
        return self.nv.forms @ self.remaining

    def without(self, B) -> "GreedyState":
        rem = self.remaining.copy()
        rem[list(B)] = 0.0
        return GreedyState(self.nv, rem, self.round + 1)

    def remaining_items(self) -> list:
        return [int(e) for e in np.flatnonzero(self.remaining)]


@dataclass
class ClassPartition:
    buckets: dict
    lambdas: dict
    subbundles: dict
    values: np.ndarray
    weights: np.ndarray

    @property
    def Lambda(self) -> float:
        return sum(CLASS_WEIGHT[c] * self.lambdas[c] for c in CLASSES)


@dataclass
class Candidate:
    bundle: frozenset
    prob: float
    parent: int
    sub: int


@dataclass
class CandidateDistribution:
    candidates: list
    bound: float

    def item_probabilities(self, m: int) -> np.ndarray:
        p = np.zeros(m)
        for c in self.candidates:
            for e in c.bundle:
                p[e] += c.prob
        return p


def band(val: float, alpha: float) -> str:
    if val < alpha - TOL:
        return "a"
    if val < 2 * alpha - TOL:
        return "2a"
    if val < 3 * alpha - TOL:
        return "3a"
    return "1"


def unify(items: list, weights: dict, alpha: float) -> list:
    """Merge the two lightest pieces while their combined weight stays below α.

    Returns (weight, sorted item tuple) pieces, lightest first.
    """
    heap = [(weights[e], (e,)) for e in items]
    heapq.heapify(heap)
    while len(heap) >= 2:
        a = heapq.heappop(heap)
        b = heapq.heappop(heap)
        if a[0] + b[0] < alpha - TOL:
            heapq.heappush(heap, (a[0] + b[0], tuple(sorted(a[1] + b[1]))))
        else:
            heapq.heappush(heap, a)
            heapq.heappush(heap, b)
            break
    return sorted(heap)


def classify_sets(nv: NormalizedValuation, live: list, alpha: float) -> ClassPartition:
    """Bucket support bundles by the value of their surviving items ``live[s]``.

    Each bundle in the 2α band yields its whole surviving set; the 3α band yields
    three pairwise unions of its three lightest unified pieces; the top band yields
    two disjoint pairs of its four lightest pieces.
    """
    vals = np.array([float(nv.forms[s, sorted(L)].sum()) if L else 0.0 for s, L in enumerate(live)])
    buckets = {c: [] for c in CLASSES}
    lambdas = {c: 0.0 for c in CLASSES}
    subs: dict = {}
    for s, lam in enumerate(nv.weights):
        if lam <= 0:
            continue
        c = band(vals[s], alpha)
        buckets[c].append(s)
        lambdas[c] += float(lam)
        if c == "a":
            continue
        items = sorted(live[s])
        if c == "2a":
            subs[s] = [frozenset(items)]
            continue
        w = {e: float(nv.forms[s, e]) for e in items}
        pieces = unify(items, w, alpha)
        need = 3 if c == "3a" else 4
        if len(pieces) >= need:
            p = [frozenset(x[1]) for x in pieces[:need]]
            subs[s] = [p[0] | p[1], p[1] | p[2], p[2] | p[0]] if c == "3a" else [p[0] | p[1], p[2] | p[3]]
            continue
        # too few pieces: fall back to the lightest-vs-rest split when both halves reach α
        head = frozenset(pieces[0][1])
        tail = frozenset(e for x in pieces[1:] for e in x[1])
        if len(pieces) < 2 or pieces[0][0] < alpha - TOL or sum(x[0] for x in pieces[1:]) < alpha - TOL:
            raise InputError(f"bundle {s} has an item worth at least alpha; strip big items first")
        subs[s] = [head, tail, head | tail] if c == "3a" else [head, tail]
    return ClassPartition(buckets, lambdas, subs, vals, nv.weights)


def classify_bundles(state: GreedyState, alpha: float) -> ClassPartition:
    rem = state.remaining
    live = [frozenset(e for e in S if rem[e] > 0) for S in state.nv.bundles]
    return classify_sets(state.nv, live, alpha)


def build_distribution(cp: ClassPartition, n: int) -> CandidateDistribution:
    """Weights λ/Λ (2α), λ/(2Λ) per sub-bundle (3α), λ/Λ per sub-bundle (top class)."""
    L = cp.Lambda
    if L <= 0:
        raise ExhaustedError("no acceptable candidate: every surviving bundle is below alpha")
    share = {"2a": 1.0 / L, "3a": 0.5 / L, "1": 1.0 / L}
    cls_of = {s: c for c in CLASSES for s in cp.buckets[c]}
    cands = []
    for s in sorted(cp.subbundles):
        lam = float(cp.weights[s])
        for k, B in enumerate(cp.subbundles[s]):
            cands.append(Candidate(B, lam * share[cls_of[s]], s, k))
    return CandidateDistribution(cands, 1.0 / (n * L))


def _beta_after(state: GreedyState, B) -> float:
    rem = state.remaining.copy()
    rem[list(B)] = 0.0
    return state.nv.beta(rem)


def minimal_acceptable(state: GreedyState, alpha: float, cap: int = 16) -> list:
    """All minimal B ⊆ remaining items with ṽ(B) >= α (exhaustive; small instances only)."""
    items = state.remaining_items()
    if len(items) > cap:
        raise InputError(f"exhaustive mode limited to {cap} remaining items")
    forms = state.nv.forms[:, items]
    k = len(items)
    masks = np.arange(1 << k, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(k)) & 1).astype(np.float64)
    ok = (member @ forms.T).max(axis=1) >= alpha - TOL
    minimal = ok.copy()
    for e in range(k):
        has = (masks >> e) & 1 == 1
        minimal[has] &= ~ok[masks[has] ^ (1 << e)]
    return [frozenset(items[e] for e in range(k) if (s >> e) & 1) for s in masks[minimal]]


def greedy_step(state: GreedyState, alpha: float, mode: str = "efficient", n: Optional[int] = None):
    """Pick the acceptable bundle that keeps the most potential.

    Returns (bundle, next state, info) with info holding Λ and the class weights.
    """
    n = state.nv.n if n is None else n
    cp = classify_bundles(state, alpha)
    info = {"Lambda": cp.Lambda, **{f"L_{c}": cp.lambdas[c] for c in CLASSES}}
    if mode == "efficient":
        dist = distribution_for(state, alpha, n, cp)
        pool = [c.bundle for c in dist.candidates]
    elif mode == "exhaustive":
        pool = minimal_acceptable(state, alpha)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not pool:
        raise ExhaustedError("no acceptable candidate", state.round, info)
    after = np.array([_beta_after(state, B) for B in pool])
    best = int(np.flatnonzero(after >= after.max() - 1e-12)[0])
    B = pool[best]
    return B, state.without(B), info


def distribution_for(state: GreedyState, alpha: float, n: int, cp: Optional[ClassPartition] = None) -> CandidateDistribution:
    cp = classify_bundles(state, alpha) if cp is None else cp
    try:
        return build_distribution(cp, n)
    except ExhaustedError as exc:
        raise ExhaustedError(str(exc), state.round) from None


@dataclass
class IdenticalResult:
    bundles: list
    values: list
    trace: list = field(default_factory=list)

    @property
    def betas(self) -> list:
        return [row["beta"] for row in self.trace]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        cols = ["round", "beta", "Lambda"] + [f"L_{c}" for c in CLASSES]
        w = csv.DictWriter(buf, fieldnames=cols)
        w.writeheader()
        for row in self.trace:
            w.writerow({k: (f"{row[k]:.12g}" if isinstance(row[k], float) else row[k]) for k in cols})
        return buf.getvalue()


def allocate_identical(nv: NormalizedValuation, alpha: float, mode: str = "efficient", items=None) -> IdenticalResult:
    """Serve nv.n agents one after another; the last agent takes everything left.

    Raises ExhaustedError (with the partial trace) when a round has no acceptable bundle.
    """
    n = nv.n
    state = GreedyState.start(nv, items)
    bundles, trace = [], []
    for i in range(1, n):
        row = {"round": i, "beta": state.beta}
        try:
            B, state, info = greedy_step(state, alpha, mode, n)
        except ExhaustedError as exc:
            raise ExhaustedError(str(exc), i, {"trace": trace + [row]}) from None
        row.update(info)
        trace.append(row)
        bundles.append(B)
    rest = frozenset(state.remaining_items())
    last = {"round": n, "beta": state.beta}
    cp = classify_bundles(state, alpha)
    last.update({"Lambda": cp.Lambda, **{f"L_{c}": cp.lambdas[c] for c in CLASSES}})
    trace.append(last)
    if nv.value(rest) < alpha - TOL:
        raise ExhaustedError("last agent's remainder is below alpha", n, {"trace": trace})
    bundles.append(rest)
    return IdenticalResult(bundles, [nv.value(b) for b in bundles], trace)
