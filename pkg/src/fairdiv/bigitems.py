"""Big items: the agent-item graph, its four-way case split, and one allocator per case."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import TOL, Allocation, Instance, value
from .errors import ClassificationError, DomainError, ExhaustedError, InputError, SolverError
from .identical import allocate_identical, build_distribution, classify_sets
from .processes import GammaConfig, gamma_trace, solve_rho, variant_for
from .randomized import FilteredPartition, RunParams, RunReport, allocate_different
from .shares import NormalizedValuation, compute_aps, normalize_aps, reweight_after_removal

DEFAULT_EPS = 1.0 / 240.0


# --- graph and matchings -------------------------------------------------------


@dataclass(frozen=True)
class BigItemGraph:
    n: int
    m: int
    adj: tuple  # adj[i] = frozenset of items big for agent i
    alpha: float = 0.0
    scales: tuple = ()

    @classmethod
    def from_edges(cls, n: int, m: int, edges) -> "BigItemGraph":
        adj = [set() for _ in range(n)]
        for i, e in edges:
            if not (0 <= i < n and 0 <= e < m):
                raise InputError(f"edge ({i}, {e}) out of range")
            adj[i].add(int(e))
        return cls(n, m, tuple(frozenset(a) for a in adj))

    @classmethod
    def from_instance(cls, inst: Instance, alpha: float, scales: Optional[Sequence[float]] = None) -> "BigItemGraph":
        """Edge (i, e) when v_i(e) >= α·APS_i and v_i(e) > 0."""
        if scales is None:
            scales = [compute_aps(v, inst.n).value for v in inst.valuations]
        adj = []
        for v, s in zip(inst.valuations, scales):
            row = v.item_max()
            adj.append(frozenset(int(e) for e in range(inst.m) if row[e] > 0 and row[e] >= alpha * s - TOL))
        return cls(inst.n, inst.m, tuple(adj), alpha, tuple(float(s) for s in scales))

    @cached_property
    def item_adj(self) -> tuple:
        out = [set() for _ in range(self.m)]
        for i, a in enumerate(self.adj):
            for e in a:
                out[e].add(i)
        return tuple(frozenset(x) for x in out)

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def has_edge(self, i: int, e: int) -> bool:
        return e in self.adj[i]


def max_matching(G: BigItemGraph, agents: Optional[Sequence[int]] = None, items=None, seed: Optional[dict] = None) -> dict:
    """Maximum matching agent -> item by augmenting paths, restricted to the given sides.

    ``seed`` is an initial matching that is only ever augmented, so its agents stay matched.
    """
    agents = list(range(G.n)) if agents is None else sorted(agents)
    allowed = None if items is None else frozenset(items)
    match_a = dict(seed or {})
    match_w = {w: a for a, w in match_a.items()}

    def nbrs(a):
        N = G.adj[a]
        return sorted(N if allowed is None else N & allowed)

    def augment(a, seen):
        for w in nbrs(a):
            if w in seen:
                continue
            seen.add(w)
            if w not in match_w or augment(match_w[w], seen):
                match_a[a] = w
                match_w[w] = a
                return True
        return False

    for a in agents:
        if a not in match_a:
            augment(a, set())
    return match_a


def maximal_matching(G: BigItemGraph, preseed: Optional[dict] = None) -> dict:
    """Greedily extend ``preseed`` (agents in index order, lowest free item) until maximal."""
    M = dict(preseed or {})
    used = set(M.values())
    for a in range(G.n):
        if a in M:
            continue
        free = sorted(G.adj[a] - used)
        if free:
            M[a] = free[0]
            used.add(free[0])
    return M


def is_matching(G: BigItemGraph, M: dict) -> bool:
    return len(set(M.values())) == len(M) and all(G.has_edge(a, w) for a, w in M.items())


def is_maximal(G: BigItemGraph, M: dict) -> bool:
    used = set(M.values())
    return all(not (G.adj[a] - used) for a in range(G.n) if a not in M)


def _reach(G: BigItemGraph, root: int, M: dict, items: frozenset):
    """Agents and items reachable from an unmatched agent by alternating paths."""
    mate = {w: a for a, w in M.items()}
    ua, uw = {root}, set()
    stack = [root]
    while stack:
        a = stack.pop()
        for w in sorted(G.adj[a] & items):
            if w in uw:
                continue
            uw.add(w)
            b = mate.get(w)
            if b is not None and b not in ua:
                ua.add(b)
                stack.append(b)
    return ua, uw


def hall_violator(G: BigItemGraph, agents: Sequence[int], items) -> Optional[tuple]:
    """A set X of agents with |N(X) ∩ items| < |X|, or None if ``agents`` can all be matched.

    Among the alternating-path closures of the unmatched agents, the largest is
    returned (ties go to the lowest root); each has exactly one more agent than items.
    """
    items = frozenset(items)
    M = max_matching(G, agents, items)
    free = [a for a in sorted(agents) if a not in M]
    if not free:
        return None
    best = None
    for r in free:
        ua, uw = _reach(G, r, M, items)
        if best is None or len(ua) > len(best[0]):
            best = (ua, uw)
    return frozenset(best[0]), frozenset(best[1])


def surplus_ok(G: BigItemGraph, U2: Sequence[int], W2: Sequence[int]) -> bool:
    """Every |W2|-subset of U2 matches W2 perfectly.

    Equivalent to |N(X) ∩ U2| >= |X| + (|U2| - |W2|) for every nonempty X ⊆ W2,
    checked by giving each item in turn d+1 copies and asking for an
    item-saturating matching.
    """
    U2, W2 = sorted(U2), sorted(W2)
    d = len(U2) - len(W2)
    if d < 0:
        return False
    if not W2:
        return True
    U2set = frozenset(U2)
    for x in W2:
        copies = [w for w in W2 if w != x] + [x] * (d + 1)
        match_u: dict = {}

        def augment(slot, seen):
            for u in sorted(G.item_adj[copies[slot]] & U2set):
                if u in seen:
                    continue
                seen.add(u)
                if u not in match_u or augment(match_u[u], seen):
                    match_u[u] = slot
                    return True
            return False

        for slot in range(len(copies)):
            if not augment(slot, set()):
                return False
    return True


# --- case classification -----------------------------------------------------------


@dataclass
class CaseResult:
    case: int
    eps: float
    matching: dict = field(default_factory=dict)  # agent -> item; (U1, W1) for cases 3 and 4
    U1: list = field(default_factory=list)
    U2: list = field(default_factory=list)
    U3: list = field(default_factory=list)
    W1: list = field(default_factory=list)
    W2: list = field(default_factory=list)
    W3: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "eps": self.eps,
            "matching": {str(a): w for a, w in sorted(self.matching.items())},
            **{k: sorted(getattr(self, k)) for k in ("U1", "U2", "U3", "W1", "W2", "W3")},
        }


def _case3(G: BigItemGraph, M: dict, eps: float) -> Optional[CaseResult]:
    free = [a for a in range(G.n) if a not in M]
    if not free or any(G.degree(a) > G.n - 3 * len(free) for a in free):
        return None
    W1 = sorted(M.values())
    return CaseResult(3, eps, dict(M), sorted(M), free, [], W1, sorted(set(range(G.m)) - set(W1)), [])


def _small_or_3(G: BigItemGraph, M: dict, eps: float) -> Optional[CaseResult]:
    if len(M) <= (1 - eps) * G.n + 1e-12:
        return CaseResult(2, eps, dict(M))
    return _case3(G, M, eps)


def classify_cases(G: BigItemGraph, eps: float = DEFAULT_EPS, audit: bool = True) -> CaseResult:
    """Return the first of the four structural cases that holds, built constructively.

    Cases 1 to 3 are tested on every maximal matching met along the way. Failing
    those, a set U0 of high-degree agents is grown greedily, a Hall violator
    inside U0 gives (U2, W2), and the leftovers are matched or sorted into U3, W3.
    Raises ClassificationError if the construction or its audit fails, which
    can only happen for ε above 1/240.
    """
    if not 0 < eps < 1:
        raise InputError("eps must lie in (0, 1)")
    n = G.n
    M = max_matching(G)
    if len(M) == n:
        res = CaseResult(1, eps, M)
        return _checked(G, res, audit)
    got = _small_or_3(G, M, eps)
    if got:
        return _checked(G, got, audit)

    # grow U0: each step adds an unmatched agent of high degree and re-matches U0
    U0: list = []
    Mt = M
    while True:
        k = n - len(Mt)
        cands = [a for a in range(n) if a not in Mt and a not in U0 and G.degree(a) > n - 3 * k]
        if not cands:
            raise ClassificationError("no high-degree unmatched agent; the U0 construction is stuck")
        U0.append(cands[0])
        sat = max_matching(G, U0)
        if len(sat) < len(U0):
            break
        Mt = maximal_matching(G, sat)
        got = _small_or_3(G, Mt, eps)
        if got:
            return _checked(G, got, audit)
    thr = (1 - 3 * eps) * n
    U0 += [a for a in range(n) if a not in U0 and G.degree(a) >= thr - 1e-12]
    U0set = frozenset(U0)
    W0 = frozenset().union(*(G.adj[a] for a in U0)) if U0 else frozenset()

    U1: dict = {}
    used: set = set()
    U3: list = []

    def sweep(agents):
        for a in sorted(agents):
            free = sorted(G.adj[a] - used)
            if free:
                U1[a] = free[0]
                used.add(free[0])
            else:
                U3.append(a)

    sweep(set(range(n)) - U0set)
    hv = hall_violator(G, U0, W0 - used)
    if hv is None:
        # U0 saturates W0: the combined matching is perfect on both sides used, try cases 2 and 3
        Mp = dict(U1)
        Mp.update(max_matching(G, U0, W0 - used))
        Mp = maximal_matching(G, Mp)
        got = _small_or_3(G, Mp, eps)
        if got:
            return _checked(G, got, audit)
        raise ClassificationError("U0 matches into W0 but neither case 2 nor case 3 holds")
    U0p, W0p = hv
    sweep(U0set - U0p)
    quarter = 0.75 * n
    W0pp = sorted(w for w in W0p - used if len(G.item_adj[w] & U0p) >= quarter - 1e-12)
    for w in sorted(W0p - used - set(W0pp)):
        cands = sorted((G.item_adj[w] & U0p) - set(U1))
        if cands:
            U1[cands[0]] = w
            used.add(w)
    U2 = sorted(U0p - set(U1))
    res = CaseResult(
        4, eps, dict(U1), sorted(U1), U2, sorted(set(range(n)) - set(U1) - set(U2)),
        sorted(U1.values()), W0pp, sorted(set(range(G.m)) - used - set(W0pp)),
    )
    return _checked(G, res, audit)


def _checked(G: BigItemGraph, res: CaseResult, audit: bool) -> CaseResult:
    if audit:
        bad = audit_case(G, res)
        if bad:
            raise ClassificationError(f"case {res.case} payload fails: {'; '.join(bad)}")
    return res


def audit_case(G: BigItemGraph, res: CaseResult, samples: int = 20, seed: int = 0) -> list:
    """List every violated payload invariant (empty when the payload is sound)."""
    n, eps, M = G.n, res.eps, res.matching
    bad = []
    if not is_matching(G, M):
        bad.append("matching uses a non-edge or repeats an item")
    if res.case == 1:
        if len(M) != n:
            bad.append("matching does not saturate U")
    elif res.case == 2:
        if not is_maximal(G, M):
            bad.append("matching not maximal")
        if len(M) > (1 - eps) * n + 1e-12:
            bad.append(f"|M|={len(M)} exceeds (1-eps)n")
    elif res.case == 3:
        if sorted(M) != sorted(res.U1) or sorted(M.values()) != sorted(res.W1):
            bad.append("(U1, W1) is not the matching")
        if not is_maximal(G, M):
            bad.append("matching not maximal")
        if sorted(res.U1 + res.U2) != list(range(n)) or sorted(res.W1 + res.W2) != list(range(G.m)):
            bad.append("U or W not partitioned")
        k = len(res.U2)
        if any(G.degree(u) > n - 3 * k for u in res.U2):
            bad.append("an agent of U2 has degree above n - 3|U2|")
    elif res.case == 4:
        U2, U3, W2, W3 = set(res.U2), set(res.U3), set(res.W2), set(res.W3)
        if sorted(M) != sorted(res.U1) or sorted(M.values()) != sorted(res.W1):
            bad.append("(U1, W1) is not the matching")
        if sorted(res.U1 + res.U2 + res.U3) != list(range(n)):
            bad.append("U not partitioned")
        if sorted(res.W1 + res.W2 + res.W3) != list(range(G.m)):
            bad.append("W not partitioned")
        if any(G.adj[u] & W3 for u in U2):
            bad.append("edge between U2 and W3")
        if any(G.adj[u] & (W2 | W3) for u in U3):
            bad.append("edge between U3 and W2 ∪ W3")
        if not (1 - 60 * eps) * n - 1e-12 <= len(W2) < len(U2):
            bad.append(f"|W2|={len(W2)} outside [(1-60eps)n, |U2|={len(U2)})")
        elif not surplus_ok(G, res.U2, res.W2):
            bad.append("some |W2|-subset of U2 has no perfect matching into W2")
        else:
            rng = np.random.default_rng(seed)
            for _ in range(samples):
                sub = sorted(int(x) for x in rng.choice(res.U2, size=len(W2), replace=False))
                if len(max_matching(G, sub, W2)) != len(W2):
                    bad.append(f"sampled subset {sub} does not match W2")
                    break
    else:
        bad.append(f"unknown case {res.case}")
    return bad


# --- case 3: capped welfare ----------------------------------------------------


@dataclass
class SurvivingFamily:
    """Bundles of an agent's APS partition that keep value at least 1 - α on W2."""

    bundles: list
    weights: np.ndarray

    @property
    def mu(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def surviving_family(fp, W1: Sequence[int], big: frozenset) -> SurvivingFamily:
    """Bundles meeting W1 in at most one item, and only in an item small for the agent."""
    W1 = frozenset(W1)
    keep = [s for s, S in enumerate(fp.bundles) if fp.weights[s] > 0 and len(S & W1) <= 1 and not (S & W1 & big)]
    return SurvivingFamily([fp.bundles[s] for s in keep], fp.weights[keep])


@njit(cache=True)
def _welfare_dp(tables, w):
    """Best Σ_t tables[t, S_t] over disjoint S_t ⊆ [w]; returns the chosen masks."""
    k = tables.shape[0]
    full = (1 << w) - 1
    f = np.full((k + 1, full + 1), -np.inf)
    arg = np.zeros((k + 1, full + 1), dtype=np.int64)
    f[0, :] = 0.0
    for t in range(1, k + 1):
        for mask in range(full + 1):
            sub = mask
            while True:
                cand = f[t - 1, mask ^ sub] + tables[t - 1, sub]
                if cand > f[t, mask] + 1e-15:
                    f[t, mask] = cand
                    arg[t, mask] = sub
                if sub == 0:
                    break
                sub = (sub - 1) & mask
    out = np.zeros(k, dtype=np.int64)
    mask = full
    for t in range(k, 0, -1):
        out[t - 1] = arg[t, mask]
        mask ^= arg[t, mask]
    return out


def capped_welfare_allocate(
    inst: Instance,
    agents: Sequence[int],
    items: Sequence[int],
    alpha: float,
    scales: Sequence[float],
    families: Optional[dict] = None,
    method: str = "auto",
    seed: int = 0,
    max_iter: int = 10_000,
    brute_limit: float = 1e6,
) -> dict:
    """Split ``items`` among ``agents`` so each reaches (1-α)/2 of its scale under min(1-α, v/scale).

    ``exact`` maximizes capped welfare by a subset DP; ``local`` starts empty and,
    while some agent is below the target, hands it a surviving bundle (taken
    from the others) whenever that raises capped welfare.
    """
    agents, items = list(agents), sorted(items)
    k, w = len(agents), len(items)
    cap = 1 - alpha
    goal = cap / 2
    if k == 0:
        return {}
    vs = {a: inst.valuations[a] for a in agents}
    sc = dict(zip(agents, scales))

    def capped(a, B):
        return min(cap, value(vs[a], B) / sc[a]) if sc[a] > 0 else cap

    if method == "auto":
        method = "exact" if k**w <= brute_limit and w <= 20 else "local"
    if method == "exact":
        tables = np.array([np.minimum(cap, vs[a].restricted(items).all_values() / sc[a]) if sc[a] > 0
                           else np.full(1 << w, cap) for a in agents])
        masks = _welfare_dp(tables, w)
        return {a: frozenset(items[e] for e in range(w) if (int(mk) >> e) & 1) for a, mk in zip(agents, masks)}
    if method != "local":
        raise ValueError(f"unknown method {method!r}")
    if families is None:
        raise InputError("local search needs the surviving families")
    rng = np.random.default_rng(seed)
    W = frozenset(items)
    B = {a: frozenset() for a in agents}

    def welfare(alloc):
        return sum(capped(a, alloc[a]) for a in agents)

    def move(a, S):
        S = S & W
        out = {b: (B[b] - S) for b in agents}
        out[a] = B[a] | S
        return out

    cur = welfare(B)
    for _ in range(max_iter):
        low = [a for a in agents if capped(a, B[a]) < goal - 1e-12]
        if not low:
            return B
        a = low[0]
        fam = families[a]
        if not fam.bundles:
            raise SolverError(f"agent {a} has no surviving bundles")
        new = None
        for _ in range(64):
            S = fam.bundles[int(rng.choice(len(fam.bundles), p=fam.mu))]
            cand = move(a, S)
            if welfare(cand) > cur + 1e-12:
                new = cand
                break
        if new is None:
            scored = [(welfare(move(a, S)), s) for s, S in enumerate(fam.bundles)]
            val, s = max(scored, key=lambda t: (t[0], -t[1]))
            if val <= cur + 1e-12:
                raise SolverError(f"no improving move for agent {a}; surviving family too light")
            new = move(a, fam.bundles[s])
        B, cur = new, welfare(new)
    raise SolverError(f"capped-welfare local search hit {max_iter} iterations")


# --- case 4 -----------------------------------------------------------------------


def w3_partition(j: int, nv: NormalizedValuation, payload: CaseResult, G: BigItemGraph, n4: int) -> NormalizedValuation:
    """Agent j's partition over W3 after handing W2 out along a matching that avoids j.

    ``nv`` is j's normalized partition over W2 ∪ W3 with entitlement 1/n4. Each
    removal drops the bundles holding the removed item and rescales the rest;
    the result is renormalized to total weight 1.
    """
    others = [u for u in payload.U2 if u != j]
    Mj = max_matching(G, others, payload.W2)
    if len(Mj) != len(payload.W2):
        raise ClassificationError(f"no matching of W2 avoiding agent {j}")
    fp = nv.partition
    cur = n4
    for e in sorted(Mj.values()):
        fp = reweight_after_removal(fp, e, cur)
        cur -= 1
    keep = [s for s in range(len(fp.bundles)) if fp.weights[s] > 0]
    w = fp.weights[keep]
    return nv.subset(keep, w / w.sum(), n4 - len(payload.W2))


def residual_floor(alpha: float, eps4: float, rho: Optional[float] = None) -> float:
    """1 - 16αε4 / (3(1-ε4)(ρ-α)), the average U2 residual the U3 phase should leave."""
    rho = solve_rho(alpha) if rho is None else rho
    return 1 - 16 * alpha * eps4 / (3 * (1 - eps4) * (rho - alpha))


@dataclass
class U3Result:
    report: Optional[RunReport]
    bundles: dict
    residual: dict  # β̂_j after the U3 phase
    average: float
    floor: float

    @property
    def floor_ok(self) -> bool:
        return self.average >= self.floor - 1e-9


def allocate_u3(u3_nvs: dict, u2_parts: dict, W3: Sequence[int], params: RunParams, floor: float = -math.inf) -> U3Result:
    """Serve U3 with the randomized allocator on W3 only; U2 partitions lose each sampled bundle.

    ``u3_nvs`` maps U3 agents to partitions over W2 ∪ W3; ``u2_parts`` maps U2 agents
    to FilteredPartition over W3 and is updated in place.
    """
    order = sorted(u2_parts)
    obs = [u2_parts[j] for j in order]
    if not u3_nvs:
        res = {j: u2_parts[j].beta for j in order}
        return U3Result(None, {}, res, float(np.mean(list(res.values()))) if res else 1.0, floor)
    agents = sorted(u3_nvs)
    rep = allocate_different([u3_nvs[a] for a in agents], params, items=W3, observers=obs)
    if not rep.ok:
        raise ExhaustedError(f"U3 phase exhausted at round {rep.exhausted_round}", rep.exhausted_round, {"case": 4})
    res = {j: u2_parts[j].beta for j in order}
    avg = float(np.mean(list(res.values()))) if res else 1.0
    return U3Result(rep, {a: rep.bundles[t] for t, a in enumerate(agents)}, res, avg, floor)


@dataclass
class U2Result:
    bundles: dict
    order: list
    averages: list  # (1/|A^k|) Σ β̂ at the start of each round
    gamma_hat: list
    tau: float
    checks: list  # per round: average >= γ̂ - τ (None where the process is undefined)

    @property
    def ok(self) -> bool:
        return all(c is not False for c in self.checks)


def gamma_hat_trace(alpha: float, n0: int, start: float, tau: float) -> Optional[np.ndarray]:
    try:
        cfg = GammaConfig(variant_for(alpha), n0, alpha, start=start, tau=tau)
    except DomainError:
        return None
    return gamma_trace(cfg).values


def allocate_u2(parts: dict, n0: int, alpha: float, n_u2: Optional[int] = None) -> U2Result:
    """Greedy-average allocation for n0 agents of U2 over their W3 partitions.

    Each round the agent with the largest β̂ picks, among the candidate sub-bundles
    of her partition, the one that leaves the other active agents the most on
    average; the bundle then leaves every partition.
    """
    active = sorted(parts)
    n_u2 = len(active) if n_u2 is None else n_u2
    if n0 > len(active):
        raise InputError("n0 exceeds the number of U2 agents")
    eps0 = n0 / n_u2 if n_u2 else 0.0
    tau = eps0 / (1 - 2 * eps0) if eps0 < 0.5 else math.inf
    out: dict = {}
    order, avgs = [], []
    parts = dict(parts)
    for k in range(1, n0 + 1):
        betas = {j: parts[j].beta for j in active}
        avgs.append(float(np.mean(list(betas.values()))))
        jk = max(active, key=lambda j: (betas[j], -j))
        cp = classify_sets(parts[jk].nv, parts[jk].live, alpha)
        try:
            dist = build_distribution(cp, parts[jk].nv.n)
        except ExhaustedError:
            raise ExhaustedError(f"U2 agent {jk} has no acceptable bundle", k, {"case": 4, "averages": avgs}) from None
        rest = [j for j in active if j != jk]
        best, best_val = None, -math.inf
        for cand in dist.candidates:
            val = sum(parts[j].without(cand.bundle).beta for j in rest)
            if val > best_val + 1e-12:
                best, best_val = cand.bundle, val
        out[jk] = best
        order.append(jk)
        active.remove(jk)
        for j in active:
            parts[j] = parts[j].without(best)
    checks: list = []
    gh = gamma_hat_trace(alpha, n0, avgs[0], tau) if avgs and math.isfinite(tau) else None
    for k, a in enumerate(avgs):
        if gh is None or k >= len(gh):
            checks.append(None)
        else:
            checks.append(bool(a >= gh[k] - tau - 1e-9))
    return U2Result(out, order, avgs, [] if gh is None else [float(x) for x in gh], tau, checks)


# --- dispatch ---------------------------------------------------------------------


@dataclass
class BigItemsResult:
    allocation: Allocation
    case: CaseResult
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"allocation": self.allocation.to_json(), "case": self.case.to_json(), "details": self.details}


def _residual_allocate(inst: Instance, agents: list, items: list, alpha: float, params: Optional[RunParams], retries: int) -> tuple:
    """Allocate ``items`` among ``agents`` (no big items left) and say how."""
    if not agents:
        return {}, "none"
    if len(agents) == 1:
        return {agents[0]: frozenset(items)}, "single"
    k = len(agents)
    vals = [inst.valuations[a].restricted(items) for a in agents]
    if k == 2:
        shares = [compute_aps(v, 2).value for v in vals]
        t0, t1 = vals[0].all_values(), vals[1].all_values()
        full = (1 << len(items)) - 1
        masks = np.arange(full + 1)
        r0 = t0 / shares[0] if shares[0] > 0 else np.full(masks.size, np.inf)
        r1 = t1[full ^ masks] / shares[1] if shares[1] > 0 else np.full(masks.size, np.inf)
        best = int(np.argmax(np.minimum(r0, r1)))
        S0 = frozenset(items[e] for e in range(len(items)) if (best >> e) & 1)
        return {agents[0]: S0, agents[1]: frozenset(items) - S0}, "split"
    if all(v == vals[0] for v in vals):
        nv = normalize_aps(vals[0], k)
        res = allocate_identical(nv, alpha)
        return {a: frozenset(items[e] for e in B) for a, B in zip(agents, res.bundles)}, "identical"
    nvs = [normalize_aps(v, k) for v in vals]
    base = params if params is not None else RunParams.default_schedule(alpha, k)
    last = None
    for t in range(retries):
        p = RunParams(alpha, base.c, base.D, base.seed + t, base.eps)
        rep = allocate_different(nvs, p)
        if rep.ok and min(rep.values) >= alpha - 1e-9:
            return {a: frozenset(items[e] for e in B) for a, B in zip(agents, rep.bundles)}, f"different(seed={p.seed})"
        last = rep
    raise ExhaustedError(f"randomized allocator failed {retries} times on the residual", last.exhausted_round if last else None)


def allocate_with_big_items(
    inst: Instance,
    alpha: float,
    eps: float = DEFAULT_EPS,
    params: Optional[RunParams] = None,
    retries: int = 20,
    case: Optional[CaseResult] = None,
) -> BigItemsResult:
    """Classify the big-item graph and run the matching allocator for its case."""
    scales = [compute_aps(v, inst.n).value for v in inst.valuations]
    G = BigItemGraph.from_instance(inst, alpha, scales)
    res = classify_cases(G, eps) if case is None else case
    bundles = {i: frozenset() for i in range(inst.n)}
    details: dict = {"scales": scales}
    if res.case in (1, 2):
        for a, w in res.matching.items():
            bundles[a] = frozenset([w])
        if res.case == 2:
            rest_a = [a for a in range(inst.n) if a not in res.matching]
            used = set(res.matching.values())
            rest_i = [e for e in range(inst.m) if e not in used]
            got, how = _residual_allocate(inst, rest_a, rest_i, alpha, params, retries)
            bundles.update(got)
            details["residual"] = how
    elif res.case == 3:
        for a, w in res.matching.items():
            bundles[a] = frozenset([w])
        fams = {}
        for a in res.U2:
            fp = compute_aps(inst.valuations[a], inst.n).witness
            fams[a] = surviving_family(fp, res.W1, G.adj[a])
        got = capped_welfare_allocate(inst, res.U2, res.W2, alpha, [scales[a] for a in res.U2], fams)
        bundles.update(got)
        details["family_weight"] = {a: float(f.weights.sum()) for a, f in fams.items()}
    else:
        bundles.update(_case4(inst, G, res, alpha, params, details))
    alloc = Allocation.build(inst, [bundles[i] for i in range(inst.n)])
    return BigItemsResult(alloc, res, details)


def _case4(inst: Instance, G: BigItemGraph, res: CaseResult, alpha: float, params: Optional[RunParams], details: dict) -> dict:
    out = {a: frozenset([w]) for a, w in res.matching.items()}
    n4 = len(res.U2) + len(res.U3)
    items4 = sorted(res.W2 + res.W3)
    nv4 = {a: normalize_aps(inst.valuations[a], n4, items4) for a in res.U2 + res.U3}
    u2_parts = {j: FilteredPartition.start(w3_partition(j, nv4[j], res, G, n4), res.W3) for j in res.U2}
    eps4 = 1 - len(res.W2) / inst.n
    p = params if params is not None else RunParams.default_schedule(alpha, max(n4, 2))
    floor = residual_floor(alpha, eps4)
    u3 = allocate_u3({a: nv4[a] for a in res.U3}, u2_parts, res.W3, p, floor)
    out.update(u3.bundles)
    n0 = len(res.U2) - len(res.W2)
    u2 = allocate_u2(u2_parts, n0, alpha)
    out.update(u2.bundles)
    left = [a for a in res.U2 if a not in u2.bundles]
    Mw = max_matching(G, left, res.W2)
    if len(Mw) != len(left):
        raise ClassificationError("remaining U2 agents do not match W2")
    out.update({a: frozenset([w]) for a, w in Mw.items()})
    details.update({
        "n4": n4, "n0": n0, "eps4": eps4,
        "u2_average": u3.average, "u2_floor": floor, "u2_floor_ok": u3.floor_ok,
        "gamma_hat_ok": u2.ok, "gamma_hat_checks": u2.checks, "tau": u2.tau, "averages": u2.averages,
        "u3_seed": p.seed,
    })
    return out
