"""Exact APS and MMS at desk scale, APS normalization, and big-item reductions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .core import TOL, Instance, XOSValuation, from_mask, value
from .errors import CapacityError, DegenerateError, SolverError
from .lp import LE, LPProblem, solve_lp

APS_ITEM_CAP = 20
MMS_MAX_N = 6
MMS_MAX_M = 12


@dataclass
class FractionalPartition:
    bundles: list
    weights: np.ndarray
    entitlement: float

    def __post_init__(self):
        self.bundles = [frozenset(b) for b in self.bundles]
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.bundles) != self.weights.shape[0]:
            raise ValueError("one weight per bundle")

    def coverage(self, m: int) -> np.ndarray:
        cov = np.zeros(m)
        for b, w in zip(self.bundles, self.weights):
            for e in b:
                cov[e] += w
        return cov

    def support(self) -> list:
        return [i for i, w in enumerate(self.weights) if w > 0]

    def is_valid(self, m: int, tol: float = TOL) -> bool:
        return (
            bool((self.weights >= -tol).all())
            and abs(self.weights.sum() - 1.0) <= tol
            and bool((self.coverage(m) <= self.entitlement + tol).all())
        )


@dataclass
class ShareResult:
    kind: str
    value: float
    witness: object


def _universe(v: XOSValuation, items: Optional[Iterable[int]]) -> list:
    return list(range(v.m)) if items is None else sorted(set(int(e) for e in items))


def _lift(mask: int, idx: Sequence[int]) -> frozenset:
    return frozenset(idx[e] for e in from_mask(mask))


# --- APS -----------------------------------------------------------------


def _subset_sums(y: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for x in y:
        sums = np.concatenate([sums, sums + x])
    return sums


def _shrink(mask: int, good: np.ndarray, k: int) -> int:
    """Drop items while the set stays good, giving a threshold-minimal set."""
    for e in range(k):
        bit = 1 << e
        if mask & bit and good[mask ^ bit]:
            mask ^= bit
    return mask


def _aps_probe(vals: np.ndarray, z: float, k: int, n: int, max_rounds: int = 10_000):
    """Is there a fractional 1/n-partition into sets worth at least z?

    Column generation on  max Σλ  s.t. every item is covered at most 1/n. The
    pricing step scans all subsets for the good set of least dual weight; the
    probe succeeds once the master reaches total weight 1.
    Returns (weights, column masks) or None.
    """
    good = vals >= z - 1e-12
    full = (1 << k) - 1
    if good[0]:
        return np.ones(1), np.zeros(1, dtype=np.int64)
    if not good[full]:
        return None
    cols = [_shrink(full, good, k)]
    bits = np.arange(k)
    for _ in range(max_rounds):
        member = ((np.array(cols, dtype=np.int64)[None, :] >> bits[:, None]) & 1).astype(np.float64)
        out = solve_lp(LPProblem(member, [LE] * k, np.full(k, 1.0 / n), -np.ones(len(cols)), "min"))
        if out.status != "optimal":
            raise SolverError(f"APS master LP ended {out.status}")
        if -out.objective >= 1.0 - 1e-12:
            return out.x, np.array(cols, dtype=np.int64)
        price = np.clip(-out.duals, 0.0, None)
        sums = np.where(good, _subset_sums(price), np.inf)
        best = int(np.argmin(sums))
        if sums[best] >= 1.0 - 1e-12:
            return None
        col = _shrink(best, good, k)
        if col in cols:
            raise SolverError("APS pricing repeated a column")
        cols.append(col)
    raise SolverError("APS column generation did not converge")


def compute_aps(v: XOSValuation, n: int, items: Optional[Iterable[int]] = None, cap: int = APS_ITEM_CAP) -> ShareResult:
    """Anyprice share of ``v`` with entitlement 1/n over ``items``.

    Binary search over the distinct subset values; each probe asks whether the
    threshold-minimal sets clearing the value admit a fractional 1/n-partition.
    """
    idx = _universe(v, items)
    k = len(idx)
    if n < 1:
        raise ValueError("n must be >= 1")
    if k > cap:
        raise CapacityError(f"APS enumeration limited to {cap} items, got {k}")
    if n == 1 or k == 0:
        whole = frozenset(idx)
        return ShareResult("APS", value(v, whole), FractionalPartition([whole], [1.0], 1.0 / n))

    vals = v.restricted(idx).all_values()
    zs = np.unique(vals)
    lo, hi = 0, zs.size - 1  # zs[0] == 0 is always feasible
    best = None
    while lo < hi:
        mid = (lo + hi + 1) // 2
        got = _aps_probe(vals, zs[mid], k, n)
        if got is not None:
            lo, best = mid, got
        else:
            hi = mid - 1
    if best is None:
        best = _aps_probe(vals, zs[lo], k, n)
        if best is None:
            raise SolverError("APS probe failed at the zero threshold")
    x, cols = best
    keep = np.flatnonzero(x > 1e-12)
    w = x[keep] / x[keep].sum()
    fp = FractionalPartition([_lift(int(c), idx) for c in cols[keep]], w, 1.0 / n)
    return ShareResult("APS", float(zs[lo]), fp)


# --- MMS -----------------------------------------------------------------


def compute_mms(
    v: XOSValuation,
    n: int,
    items: Optional[Iterable[int]] = None,
    max_n: int = MMS_MAX_N,
    max_m: int = MMS_MAX_M,
) -> ShareResult:
    """Maximin share by depth-first assignment in item order.

    Bundles are opened in order (an item may only start the first empty bundle),
    which removes the n! relabelings. A bundle's value plus everything still
    unassigned bounds what it can reach, which prunes the search.
    """
    idx = _universe(v, items)
    k = len(idx)
    if n > max_n or k > max_m:
        raise CapacityError(f"MMS search guarded at n <= {max_n}, m <= {max_m}; got n={n}, m={k}")
    if n == 1:
        whole = frozenset(idx)
        return ShareResult("MMS", value(v, whole), [whole])
    vals = v.restricted(idx).all_values()

    # greedy start: give each item to the currently poorest bundle
    order = sorted(range(k), key=lambda e: -vals[1 << e])
    start = np.zeros(n, dtype=np.int64)
    for e in order:
        b = min(range(n), key=lambda j: vals[start[j]])
        start[b] |= 1 << e
    best = _mms_dfs(vals, k, n, float(vals[start].min()), start)
    best_val = float(vals[best].min())
    witness = [_lift(int(s), idx) for s in best]
    return ShareResult("MMS", float(best_val), witness)


@njit(cache=True)
def _mms_dfs(vals, k, n, best_val, start):
    best = start.copy()
    masks = np.zeros(n, dtype=np.int64)
    choice = np.full(k + 1, -1, dtype=np.int64)
    used_at = np.zeros(k + 1, dtype=np.int64)
    full = (np.int64(1) << k) - 1
    pos = 0
    enter = True
    while pos >= 0:
        if enter:
            if pos == k:
                cur = np.inf
                for j in range(n):
                    cur = min(cur, vals[masks[j]])
                if cur > best_val:
                    best_val = cur
                    best[:] = masks
                pos -= 1
                enter = False
                continue
            used = used_at[pos]
            rest = full & ~((np.int64(1) << pos) - 1)
            ub = vals[rest] if used < n else np.inf
            for j in range(used):
                ub = min(ub, vals[masks[j] | rest])
            if ub <= best_val + 1e-15:
                pos -= 1
                enter = False
                continue
            choice[pos] = -1
        used = used_at[pos]
        bit = np.int64(1) << pos
        if choice[pos] >= 0:
            masks[choice[pos]] &= ~bit
        j = choice[pos] + 1
        if j < min(used + 1, n):
            choice[pos] = j
            masks[j] |= bit
            used_at[pos + 1] = max(used, j + 1)
            pos += 1
            enter = True
        else:
            choice[pos] = -1
            pos -= 1
            enter = False
    return best


# --- normalization ---------------------------------------------------------


@dataclass
class NormalizedValuation:
    """APS-normalized valuation with one additive form per support bundle.

    ``forms[s]`` is zero outside ``bundles[s]`` and sums to 1 on it; ``scale`` is
    the APS of the original valuation so that ṽ <= v / scale pointwise.
    """

    n: int
    m: int
    scale: float
    bundles: list
    weights: np.ndarray
    forms: np.ndarray
    clause_of: list = field(default_factory=list)

    @property
    def valuation(self) -> XOSValuation:
        return XOSValuation(tuple(tuple(r) for r in self.forms.tolist()))

    @property
    def partition(self) -> FractionalPartition:
        return FractionalPartition(self.bundles, self.weights, 1.0 / self.n)

    def value(self, S: Iterable[int]) -> float:
        idx = list(S)
        if not idx:
            return 0.0
        return float(self.forms[:, idx].sum(axis=1).max())

    def beta(self, remaining_mask: np.ndarray) -> float:
        """Σ λ_S v_S(S ∩ remaining) for a 0/1 item vector."""
        return float(self.weights @ (self.forms @ remaining_mask))

    def subset(self, keep: Sequence[int], weights: np.ndarray, n: int) -> "NormalizedValuation":
        keep = list(keep)
        return NormalizedValuation(
            n, self.m, self.scale, [self.bundles[s] for s in keep], np.asarray(weights, dtype=np.float64),
            self.forms[keep].copy(), [self.clause_of[s] for s in keep] if self.clause_of else [],
        )


def normalize_from_partition(v: XOSValuation, n: int, aps: float, fp: FractionalPartition) -> NormalizedValuation:
    if aps <= TOL:
        raise DegenerateError("APS is zero; cannot normalize")
    K = len(fp.bundles)
    forms = np.zeros((K, v.m))
    clause_of = []
    for s, S in enumerate(fp.bundles):
        idx = sorted(S)
        sums = v.matrix[:, idx].sum(axis=1)
        k = int(np.argmax(sums))
        if sums[k] <= 0:
            raise DegenerateError(f"support bundle {s} has zero value")
        forms[s, idx] = v.matrix[k, idx] / sums[k]
        clause_of.append(k)
    return NormalizedValuation(n, v.m, aps, list(fp.bundles), fp.weights.copy(), forms, clause_of)


def exact_cover(fp: FractionalPartition, items: Iterable[int]) -> FractionalPartition:
    """Pad bundles so every item in ``items`` is covered exactly fp.entitlement.

    Values can only grow (goods are monotone), so the share stays feasible. An
    item short of its coverage joins bundles that lack it, splitting the last
    bundle when only part of its weight is needed.
    """
    bundles = [frozenset(b) for b in fp.bundles]
    w = [float(x) for x in fp.weights]
    cap = fp.entitlement
    for e in sorted(items):
        short = cap - sum(x for b, x in zip(bundles, w) if e in b)
        s = 0
        while short > 1e-15 and s < len(bundles):
            if e not in bundles[s] and w[s] > 0:
                take = min(short, w[s])
                if take < w[s] - 1e-15:
                    bundles.append(bundles[s])
                    w.append(w[s] - take)
                    w[s] = take
                bundles[s] = bundles[s] | {e}
                short -= take
            s += 1
    return FractionalPartition(bundles, np.array(w), cap)


def normalize_aps(v: XOSValuation, n: int, items: Optional[Iterable[int]] = None) -> NormalizedValuation:
    """Normalize ``v`` by its APS over an exactly covering witness partition."""
    res = compute_aps(v, n, items)
    if res.value <= TOL:
        raise DegenerateError("APS is zero; cannot normalize")
    fp = res.witness
    keep = fp.support()
    fp = FractionalPartition([fp.bundles[s] for s in keep], fp.weights[keep], fp.entitlement)
    fp = exact_cover(fp, _universe(v, items))
    return normalize_from_partition(v, n, res.value, fp)


# --- reductions ------------------------------------------------------------


def reweight_after_removal(fp: FractionalPartition, e: int, n: int) -> FractionalPartition:
    """Drop every bundle containing ``e`` and rescale the rest by n/(n-1)."""
    if n < 2:
        raise DegenerateError("need n >= 2 to remove an agent")
    hit = np.array([e in b for b in fp.bundles], dtype=bool)
    if fp.weights[~hit].sum() <= TOL:
        raise DegenerateError(f"all weight sits on bundles containing item {e}")
    w = np.where(hit, 0.0, fp.weights * n / (n - 1))
    return FractionalPartition(list(fp.bundles), w, 1.0 / (n - 1))


def sub_instance(inst: Instance, agents: Sequence[int], items: Sequence[int]) -> Instance:
    """Instance over the given agents and items, re-indexed densely in the given order."""
    vals = tuple(inst.valuations[i].restricted(items) for i in agents)
    return Instance(len(agents), len(items), vals)


@dataclass
class StripResult:
    gifts: dict
    agents: list
    items: list
    reduced: Optional[Instance]
    aps_before: dict
    aps_after: dict


def strip_big_items(inst: Instance, alpha: float) -> StripResult:
    """Hand out items worth at least α·APS to some agent, one agent at a time.

    Each round recomputes the APS of the agents still present; the lowest-index
    agent holding a big item takes its lowest-index big item and leaves.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    agents = list(range(inst.n))
    items = list(range(inst.m))
    gifts: dict = {}
    aps = {i: compute_aps(inst.valuations[i], inst.n).value for i in agents}
    before = dict(aps)
    while agents and items:
        pick = None
        for i in agents:
            row = inst.valuations[i].item_max()
            for e in items:
                if row[e] >= alpha * aps[i] - TOL:
                    pick = (i, e)
                    break
            if pick:
                break
        if pick is None:
            break
        i, e = pick
        gifts[i] = e
        agents.remove(i)
        items.remove(e)
        aps = {j: compute_aps(inst.valuations[j], len(agents), items).value for j in agents}
    reduced = sub_instance(inst, agents, items) if agents else None
    return StripResult(gifts, agents, items, reduced, before, {j: aps[j] for j in agents})


def layered_valuation(n: int, m: int, layers: int, rng: np.random.Generator, max_item: float = 1.0,
                      pool: Optional[list] = None, overlap: float = 0.0) -> NormalizedValuation:
    """A normalized valuation built from ``layers`` random partitions of the items into n bundles.

    Every bundle gets weight 1/(layers·n), so each item is covered exactly 1/n,
    and a random additive form summing to 1 with no item at or above ``max_item``.
    With probability ``overlap`` a layer is copied from ``pool`` (shared layers
    make agents compete for the same bundles).
    """
    if n < 1 or m < n or layers < 1:
        raise ValueError("need n >= 1, m >= n, layers >= 1")
    if max_item * -(-m // n) <= 1.0 and n > 1:
        raise ValueError("max_item too small for the bundle sizes")
    bundles, forms = [], []
    for _ in range(layers):
        if pool and rng.random() < overlap:
            lb, lf = pool[int(rng.integers(len(pool)))]
        else:
            lb, lf = _random_layer(n, m, rng, max_item)
            if pool is not None:
                pool.append((lb, lf))
        bundles += lb
        forms += lf
    K = len(bundles)
    return NormalizedValuation(n, m, 1.0, bundles, np.full(K, 1.0 / K), np.array(forms))


def _random_layer(n, m, rng, max_item):
    perm = rng.permutation(m)
    cuts = np.sort(rng.choice(np.arange(1, m), size=n - 1, replace=False)) if n > 1 else []
    parts = np.split(perm, cuts)
    # rebalance so every part can hold weight 1 with items below max_item
    need = int(np.floor(1.0 / max_item)) + 1 if max_item < 1 else 1
    parts = [list(p) for p in parts]
    for p in parts:
        while len(p) < need:
            donor = max(parts, key=len)
            if len(donor) <= need:
                raise ValueError("too few items for the requested max_item")
            p.append(donor.pop())
    bs, fs = [], []
    for p in parts:
        while True:
            x = rng.uniform(0.5, 1.0, size=len(p))
            x /= x.sum()
            if x.max() < max_item:
                break
        f = np.zeros(m)
        f[p] = x
        bs.append(frozenset(int(e) for e in p))
        fs.append(f)
    return bs, fs
