"""End-to-end runs: reduce, allocate, then check the result against recomputed shares."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .bigitems import DEFAULT_EPS, allocate_with_big_items
from .core import TOL, Allocation, Instance, bundle, check_disjoint, value
from .errors import ExhaustedError, FairDivError, InputError
from .identical import allocate_identical
from .randomized import RunParams, allocate_different
from .shares import compute_aps, compute_mms, normalize_aps, strip_big_items

MODES = ("identical", "different", "full")
VERIFY_TOL = 1e-9


@dataclass
class AgentCheck:
    agent: int
    achieved: float
    share: float
    ratio: float
    passed: bool


@dataclass
class VerificationReport:
    alpha: float
    share: str
    agents: list

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.agents)

    @property
    def failures(self) -> int:
        return sum(not a.passed for a in self.agents)

    @property
    def min_ratio(self) -> float:
        return min((a.ratio for a in self.agents), default=float("inf"))

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "share": self.share,
            "passed": self.passed,
            "failures": self.failures,
            "min_ratio": self.min_ratio,
            "agents": [a.__dict__ for a in self.agents],
        }


def verify_allocation(inst: Instance, bundles: Sequence[Iterable[int]], alpha: float, share: str = "aps") -> VerificationReport:
    """Recompute each agent's value and share from scratch and compare against α·share."""
    if share not in ("aps", "mms"):
        raise InputError(f"share must be 'aps' or 'mms', got {share!r}")
    if len(bundles) != inst.n:
        raise InputError(f"expected {inst.n} bundles, got {len(bundles)}")
    bs = [bundle(b) for b in bundles]
    check_disjoint(bs, inst.m)
    rows = []
    for i, (v, B) in enumerate(zip(inst.valuations, bs)):
        got = value(v, B)
        s = compute_aps(v, inst.n).value if share == "aps" else compute_mms(v, inst.n).value
        ratio = got / s if s > TOL else float("inf")
        rows.append(AgentCheck(i, got, s, ratio, got >= alpha * s - VERIFY_TOL))
    return VerificationReport(alpha, share, rows)


def summarize(reports: Sequence[VerificationReport]) -> dict:
    return {
        "runs": len(reports),
        "failures": sum(r.failures for r in reports),
        "failed_runs": sum(not r.passed for r in reports),
        "min_ratio": min((r.min_ratio for r in reports), default=float("inf")),
    }


@dataclass
class PipelineReport:
    mode: str
    alpha: float
    params: Optional[RunParams]
    allocation: Allocation
    gifts: dict = field(default_factory=dict)
    case: Optional[dict] = None
    details: dict = field(default_factory=dict)
    verification: Optional[VerificationReport] = None

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "params": None if self.params is None else self.params.to_json(),
            "allocation": self.allocation.to_json(),
            "gifts": {str(k): v for k, v in sorted(self.gifts.items())},
            "case": self.case,
            "details": self.details,
            "verification": None if self.verification is None else self.verification.to_json(),
        }


def _tag(exc: FairDivError, stage: str) -> FairDivError:
    if getattr(exc, "stage", None) is None:
        exc.stage = stage
    return exc


def _reduced_bundles(inst: Instance, alpha: float, mode: str, params: Optional[RunParams]):
    """Strip big items, then run the small-item allocator on what is left."""
    try:
        st = strip_big_items(inst, alpha)
    except FairDivError as exc:
        raise _tag(exc, "strip") from None
    out = {i: frozenset([e]) for i, e in st.gifts.items()}
    details: dict = {"stripped": len(st.gifts)}
    agents, items, red = st.agents, st.items, st.reduced
    if not agents:
        return out, details, None, st.gifts
    for i in agents:
        out[i] = frozenset()
    k = len(agents)
    live = [t for t in range(k) if st.aps_after[agents[t]] > TOL]
    if not live:
        out[agents[0]] = frozenset(items)
        return out, details, None, st.gifts
    if k == 1:
        out[agents[0]] = frozenset(items)
        return out, details, None, st.gifts
    try:
        if mode == "identical":
            if any(v != red.valuations[0] for v in red.valuations):
                raise InputError("identical mode needs identical valuations")
            res = allocate_identical(normalize_aps(red.valuations[0], k), alpha)
            local = res.bundles
            details["beta_trace"] = res.betas
            used = params
        else:
            nvs = [normalize_aps(red.valuations[t], k) for t in live]
            used = params if params is not None else RunParams.default_schedule(alpha, k)
            rep = allocate_different(nvs, used)
            if not rep.ok:
                raise ExhaustedError("randomized allocator exhausted", rep.exhausted_round, {"seed": used.seed})
            local = [frozenset()] * k
            for pos, t in enumerate(live):
                local[t] = rep.bundles[pos]
            details["flags"] = rep.flags
    except FairDivError as exc:
        raise _tag(exc, "allocate") from None
    for t, B in enumerate(local):
        out[agents[t]] = frozenset(items[e] for e in B)
    return out, details, used, st.gifts


def run_pipeline(
    inst: Instance,
    alpha: float,
    mode: str = "full",
    params: Optional[RunParams] = None,
    eps: float = DEFAULT_EPS,
    share: Optional[str] = "aps",
) -> PipelineReport:
    """Allocate ``inst`` at target α and, unless ``share`` is None, verify the result.

    ``identical`` and ``different`` first hand out big items one at a time and then
    run the matching small-item allocator; ``full`` classifies the big-item graph
    and dispatches on its case. Errors carry a ``stage`` attribute.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    if inst.n == 1:
        alloc = Allocation.build(inst, [range(inst.m)])
        rep = PipelineReport(mode, alpha, params, alloc, details={"trivial": True})
    elif mode == "full":
        try:
            res = allocate_with_big_items(inst, alpha, eps, params)
        except FairDivError as exc:
            raise _tag(exc, "bigitems") from None
        rep = PipelineReport(mode, alpha, params, res.allocation, case=res.case.to_json(), details=res.details)
    else:
        out, details, used, gifts = _reduced_bundles(inst, alpha, mode, params)
        alloc = Allocation.build(inst, [out[i] for i in range(inst.n)])
        rep = PipelineReport(mode, alpha, used, alloc, gifts, details=details)
    if share is not None:
        try:
            rep.verification = verify_allocation(inst, rep.allocation.bundles, alpha, share)
        except FairDivError as exc:
            raise _tag(exc, "verify") from None
    return rep
