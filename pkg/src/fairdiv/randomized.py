"""Randomized allocation for agents with different XOS valuations.

Each round serves the unserved agent with the largest surviving potential β. Her
bundle is sampled from the candidate distribution of her filtered partition.
Every other unserved agent then filters: the sampled items leave only a prefix
of her bundles, so her β drops by at most c. Items kept in the other bundles may
later be taken again by that agent, which is the only way an earlier agent loses
value ("stealing").
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import TOL, Instance
from .errors import DomainError, InputError
from .identical import build_distribution, classify_sets
from .processes import GammaConfig, gamma_trace, variant_for
from .shares import NormalizedValuation, normalize_aps


@dataclass(frozen=True)
class RunParams:
    alpha: float
    c: float
    D: float
    seed: int = 0
    eps: Optional[float] = None  # turns on the β monitor when set

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if self.c <= 0 or self.D <= 0:
            raise InputError("c and D must be positive")

    @classmethod
    def default_schedule(cls, alpha: float, n: int, seed: int = 0) -> "RunParams":
        from .processes import default_schedule

        s = default_schedule(alpha, max(n, 2))
        return cls(alpha, s.c, s.D, seed, s.eps)

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "c": self.c, "D": self.D, "seed": self.seed, "eps": self.eps}


@dataclass
class FilteredPartition:
    """An agent's support bundles with the items each one still holds."""

    nv: NormalizedValuation
    live: list

    @classmethod
    def start(cls, nv: NormalizedValuation, items=None) -> "FilteredPartition":
        keep = None if items is None else frozenset(items)
        return cls(nv, [S if keep is None else S & keep for S in nv.bundles])

    def values(self) -> np.ndarray:
        return np.array([float(self.nv.forms[s, sorted(L)].sum()) if L else 0.0 for s, L in enumerate(self.live)])

    @property
    def beta(self) -> float:
        return float(self.nv.weights @ self.values())

    def without(self, B) -> "FilteredPartition":
        B = frozenset(B)
        return FilteredPartition(self.nv, [L - B for L in self.live])


@dataclass
class FilterInfo:
    order: list
    T: int
    full: bool
    drop: float
    prefix_weight: float


def _form_value(form: np.ndarray, S) -> float:
    return float(form[sorted(S)].sum()) if S else 0.0


def damage(B, nv_j: NormalizedValuation) -> float:
    """Δ(B, j) = Σ_S λ_j(S)·v_S(B ∩ S), using j's per-bundle forms."""
    idx = sorted(B)
    if not idx:
        return 0.0
    return float(nv_j.weights @ nv_j.forms[:, idx].sum(axis=1))


def total_damage(B, i: int, nvs: Sequence[NormalizedValuation]) -> float:
    return sum(damage(B, nv) for j, nv in enumerate(nvs) if j != i)


def prune_dangerous(nvs: Sequence[NormalizedValuation], D: float, items=None):
    """Start every agent's filtered partition, emptying bundles with total damage above D.

    Returns (partitions, pruned bundle ids per agent, Δ_i(S) per agent).
    """
    if D <= 0:
        raise InputError("D must be positive")
    parts, pruned, dmg = [], [], []
    for i, nv in enumerate(nvs):
        fp = FilteredPartition.start(nv, items)
        d = np.array([total_damage(S, i, nvs) for S in nv.bundles])
        drop = [s for s in range(len(d)) if d[s] > D]
        for s in drop:
            fp.live[s] = frozenset()
        parts.append(fp)
        pruned.append(drop)
        dmg.append(d)
    return parts, pruned, dmg


def filter_step(v_i: np.ndarray, B, part: FilteredPartition, c: float):
    """Remove B from the longest prefix of bundles whose weighted loss stays within c.

    Bundles are ordered by the picker's value ``v_i`` of their overlap with B,
    largest first; ties keep bundle order.
    """
    if c <= 0:
        raise InputError("c must be positive")
    B = frozenset(B)
    nv = part.nv
    key = [_form_value(v_i, B & L) for L in part.live]
    order = sorted(range(len(part.live)), key=lambda s: -key[s])
    loss = [float(nv.weights[s]) * _form_value(nv.forms[s], B & part.live[s]) for s in order]
    acc, T = 0.0, 0
    for x in loss:
        if acc + x > c + 1e-12:
            break
        acc += x
        T += 1
    live = list(part.live)
    for s in order[:T]:
        live[s] = live[s] - B
    pw = float(sum(nv.weights[s] for s in order[:T]))
    return FilteredPartition(nv, live), FilterInfo(order, T, T == len(order), acc, pw)


@dataclass
class RunReport:
    n: int
    params: RunParams
    status: str = "ok"
    bundles: list = field(default_factory=list)  # Q_i
    initial: list = field(default_factory=list)  # B_i
    parents: list = field(default_factory=list)
    order: list = field(default_factory=list)
    beta: list = field(default_factory=list)  # row k: β at the start of round k+1, NaN once served
    beta1: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    draws: list = field(default_factory=list)
    filters: list = field(default_factory=list)
    stolen: list = field(default_factory=list)  # parent-form loss v_S(B_i) - v_S(Q_i)
    stealers: list = field(default_factory=list)
    thefts: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    exhausted_round: Optional[int] = None
    values: list = field(default_factory=list)  # ṽ_i(Q_i)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def beta_matrix(self) -> np.ndarray:
        return np.array(self.beta, dtype=np.float64).reshape(-1, self.n)

    def max_drop(self) -> float:
        """Largest one-round β decrease of any agent that stays unserved."""
        M = self.beta_matrix()
        if M.shape[0] < 2:
            return 0.0
        d = M[:-1] - M[1:]
        d = d[~np.isnan(d)]
        return float(d.max(initial=0.0))

    def min_increase(self) -> float:
        M = self.beta_matrix()
        if M.shape[0] < 2:
            return 0.0
        d = M[:-1] - M[1:]
        d = d[~np.isnan(d)]
        return float(d.min(initial=0.0))

    def to_json(self) -> dict:
        nan = lambda x: None if x is None or (isinstance(x, float) and math.isnan(x)) else x
        return {
            "status": self.status,
            "seed": self.params.seed,
            "params": self.params.to_json(),
            "bundles": [sorted(b) for b in self.bundles],
            "initial": [sorted(b) for b in self.initial],
            "order": self.order,
            "beta": [[nan(x) for x in row] for row in self.beta],
            "draws": self.draws,
            "flags": self.flags,
            "stolen": self.stolen,
            "stealers": self.stealers,
            "pruned": self.pruned,
            "exhausted_round": self.exhausted_round,
            "values": self.values,
        }


def stolen_bound(c: float, D: float, n: int) -> float:
    return D / (c * (c * n - 1)) if c * n > 1 else math.inf


def theft_bound(c: float, n: int) -> float:
    return 1.0 / (c * n - 1) if c * n > 1 else math.inf


def _gamma_floor(alpha: float, n: int, start: float, eps: float) -> Optional[np.ndarray]:
    try:
        cfg = GammaConfig(variant_for(alpha), n, alpha, start=start, eps=eps)
    except DomainError:
        return None
    return gamma_trace(cfg).values


def _normalize_all(inst: Instance) -> list:
    return [normalize_aps(v, inst.n) for v in inst.valuations]


def allocate_different(source, params: RunParams, items=None, observers: Optional[list] = None) -> RunReport:
    """Run the randomized allocator on an Instance or on normalized valuations.

    ``observers`` is an optional list of FilteredPartition that are never served
    but lose every sampled bundle in full; they are updated in place.
    """
    nvs = _normalize_all(source) if isinstance(source, Instance) else list(source)
    n = len(nvs)
    if n < 1:
        raise InputError("need at least one agent")
    a, c, D = params.alpha, params.c, params.D
    rng = np.random.default_rng(params.seed)
    parts, pruned, _ = prune_dangerous(nvs, D, items)
    rep = RunReport(n, params, pruned=pruned)
    rep.beta1 = [p.beta for p in parts]
    floors = [None] * n
    if params.eps is not None:
        floors = [_gamma_floor(a, n, b, params.eps) for b in rep.beta1]

    active = list(range(n))
    Q: dict = {}
    Bs: dict = {}
    forms: dict = {}
    steal_from: dict = {i: [] for i in range(n)}
    for k in range(1, n + 1):
        betas = {j: parts[j].beta for j in active}
        rep.beta.append([betas.get(j, math.nan) for j in range(n)])
        for j in active:
            f = floors[j]
            if f is not None and k <= len(f) and betas[j] < f[k - 1] - params.eps - TOL:
                rep.flags.append({"round": k, "agent": j, "beta": betas[j], "gamma": float(f[k - 1])})
        i = max(active, key=lambda j: (betas[j], -j))
        cp = classify_sets(nvs[i], parts[i].live, a)
        if cp.Lambda <= 0:
            rep.status = "exhausted"
            rep.exhausted_round = k
            break
        dist = build_distribution(cp, nvs[i].n)
        probs = np.array([cd.prob for cd in dist.candidates])
        u = float(rng.random())
        idx = int(min(np.searchsorted(np.cumsum(probs) / probs.sum(), u, side="right"), len(probs) - 1))
        cand = dist.candidates[idx]
        B = cand.bundle
        rep.draws.append({"round": k, "agent": i, "index": idx, "u": u})
        rep.order.append(i)
        rep.parents.append(cand.parent)
        form = nvs[i].forms[cand.parent]
        for h in Q:
            hit = Q[h] & B
            if hit:
                lost = _form_value(forms[h], Bs[h] & B)
                rep.thefts.append({"round": k, "from": h, "by": i, "items": sorted(hit), "value": lost})
                steal_from[h].append(i)
                Q[h] = Q[h] - B
        Q[i], Bs[i], forms[i] = frozenset(B), frozenset(B), form
        active.remove(i)
        info = {}
        for j in active:
            parts[j], fi = filter_step(form, B, parts[j], c)
            info[j] = {"T": fi.T, "full": fi.full, "drop": fi.drop, "prefix_weight": fi.prefix_weight}
        rep.filters.append({"round": k, "picker": i, "agents": info})
        for ob in observers or []:
            ob.live[:] = [L - B for L in ob.live]
    rep.beta.append([parts[j].beta if j in active else math.nan for j in range(n)])

    rep.initial = [Bs.get(i, frozenset()) for i in range(n)]
    rep.bundles = [Q.get(i, frozenset()) for i in range(n)]
    rep.stolen = [
        _form_value(forms[i], Bs[i]) - _form_value(forms[i], Q[i]) if i in Q else 0.0 for i in range(n)
    ]
    rep.stealers = [sorted(set(steal_from[i])) for i in range(n)]
    rep.values = [nvs[i].value(rep.bundles[i]) for i in range(n)]
    return rep


@dataclass
class AuditResult:
    max_drop: float
    min_beta1_slack: float
    max_stolen: float
    max_theft: float
    max_stealers: int
    disjoint: bool

    def holds(self, c: float, D: float, n: int) -> bool:
        return (
            self.max_drop <= c + 1e-9
            and self.min_beta1_slack >= -1e-9
            and self.max_stolen <= stolen_bound(c, D, n) + 1e-9
            and self.max_theft <= theft_bound(c, n) + 1e-9
            and self.max_stealers <= D / c + 1e-9
            and self.disjoint
        )


def audit_run(rep: RunReport) -> AuditResult:
    """Recompute the per-run guarantees from the trace alone."""
    n, c, D = rep.n, rep.params.c, rep.params.D
    floor = 1 - (n - 1) / (D * n)
    seen: set = set()
    disjoint = True
    for b in rep.bundles:
        if seen & b:
            disjoint = False
        seen |= b
    return AuditResult(
        rep.max_drop(),
        min((b - floor for b in rep.beta1), default=0.0),
        max(rep.stolen, default=0.0),
        max((t["value"] for t in rep.thefts), default=0.0),
        max((len(s) for s in rep.stealers), default=0),
        disjoint and rep.min_increase() >= -1e-12,
    )
