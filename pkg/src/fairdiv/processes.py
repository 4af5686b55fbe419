"""Probability bounds, the OPT program, γ recurrences, epoch bounds, doubling and roots."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .errors import DomainError, RootError
from .lp import EQ, GE, LPProblem, solve_lp

SEAM = 3.0 / 11.0


def regime(alpha: float, beta: float) -> str:
    if alpha <= SEAM:
        return "small"
    return "big-high" if beta >= 3 * alpha else "big-low"


def p_bound(alpha: float, beta: float, n: float) -> float:
    """Largest per-item sampling probability guaranteed at potential ``beta``."""
    if beta <= alpha:
        raise DomainError(f"p_bound needs beta > alpha (beta={beta}, alpha={alpha})")
    r = regime(alpha, beta)
    if r == "small":
        return (1 - alpha) / (2 * (beta - alpha) * n)
    if r == "big-high":
        return 2 * (1 - 3 * alpha) / ((beta - 12 * alpha + 3) * n)
    return 4 * alpha / (3 * (beta - alpha) * n)


def opt_w_closed(alpha: float, beta: float) -> float:
    r = regime(alpha, beta)
    if r == "small":
        return 2 * (beta - alpha) / (1 - alpha)
    if r == "big-high":
        return (beta - 12 * alpha + 3) / (2 * (1 - 3 * alpha))
    return 3 * (beta - alpha) / (4 * alpha)


def opt_w_lp(alpha: float, beta: float) -> float:
    """min w2 + 1.5 w3 + 2 w1  s.t.  Σw = 1,  α wα + 2α w2 + 3α w3 + w1 >= β,  w >= 0."""
    A = np.array([[1.0, 1.0, 1.0, 1.0], [alpha, 2 * alpha, 3 * alpha, 1.0]])
    out = solve_lp(LPProblem(A, [EQ, GE], [1.0, beta], c=[0.0, 1.0, 1.5, 2.0], sense="min"))
    if out.status != "optimal":
        raise DomainError(f"OPT program {out.status} at alpha={alpha}, beta={beta}")
    return out.objective


def pt_curve(alpha: float, n: float, ts: Sequence[float]) -> list:
    return [(float(t), p_bound(alpha, t, n)) for t in ts]


# --- γ recurrences -----------------------------------------------------------

SMALL, BIG = 0, 1


@njit(cache=True)
def _p_of(big, alpha, x, n):
    if big == SMALL:
        return (1.0 - alpha) / (2.0 * (x - alpha) * n)
    if x >= 3.0 * alpha:
        return 2.0 * (1.0 - 3.0 * alpha) / ((x - 12.0 * alpha + 3.0) * n)
    return 4.0 * alpha / (3.0 * (x - alpha) * n)


@njit(cache=True)
def _trace(big, alpha, n, steps, start, shift):
    vals = np.empty(steps)
    regs = np.zeros(steps, dtype=np.int8)
    g = start
    k = 0
    vals[0] = g
    for k in range(1, steps):
        x = g - shift
        if x <= alpha:
            return vals[:k], regs[:k], False
        if big == BIG:
            regs[k] = 1 if x >= 3.0 * alpha else 2
        g = (1.0 - _p_of(big, alpha, x, n)) * g
        vals[k] = g
    if steps >= 1 and vals[steps - 1] - shift <= alpha:
        return vals, regs, False
    return vals, regs, True


@njit(cache=True)
def _sweep(big, alpha, n_lo, n_hi, start, shift, lanes):
    """γ_n^n for every n in [n_lo, n_hi]; -inf marks a trace that dropped to the floor."""
    out = np.empty(n_hi - n_lo + 1)
    g = np.empty(lanes)
    nn = np.empty(lanes)
    dead = np.zeros(lanes, dtype=np.bool_)
    hi_num = 2.0 * (1.0 - 3.0 * alpha)
    lo_num = 4.0 * alpha / 3.0
    sm_num = (1.0 - alpha) / 2.0
    for b in range(n_lo, n_hi + 1, lanes):
        width = min(lanes, n_hi + 1 - b)
        for j in range(lanes):
            g[j] = start
            nn[j] = b + j if j < width else b
            dead[j] = False
        # every lane shares the first b - 1 updates, run them in lockstep
        for _ in range(b - 1):
            for j in range(lanes):
                x = g[j] - shift
                dead[j] = dead[j] | (x <= alpha)
                if big == SMALL:
                    num = sm_num
                    den = x - alpha
                else:
                    hi = x >= 3.0 * alpha
                    num = hi_num if hi else lo_num
                    den = (x - 12.0 * alpha + 3.0) if hi else (x - alpha)
                g[j] = g[j] - num / (den * nn[j]) * g[j]
        for j in range(width):
            gj = g[j]
            dj = dead[j]
            for _ in range(j):
                x = gj - shift
                dj = dj | (x <= alpha)
                gj = (1.0 - _p_of(big, alpha, x, nn[j])) * gj
            out[b - n_lo + j] = -np.inf if (dj or gj - shift <= alpha) else gj
    return out


@dataclass
class GammaConfig:
    variant: str  # "small" or "big"
    n: int
    alpha: float
    start: float = 1.0
    eps: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if self.variant not in ("small", "big"):
            raise ValueError(f"variant must be 'small' or 'big', got {self.variant!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.start <= self.alpha + self.eps + self.tau:
            raise DomainError("start must exceed alpha + eps + tau")

    @property
    def shift(self) -> float:
        return self.eps + self.tau


@dataclass
class GammaTrace:
    values: np.ndarray
    regimes: np.ndarray
    completed: bool
    config: Optional[GammaConfig] = None

    @property
    def final(self) -> float:
        return float(self.values[-1])


def variant_for(alpha: float) -> str:
    return "small" if alpha <= SEAM else "big"


def gamma_trace(cfg: GammaConfig, steps: Optional[int] = None) -> GammaTrace:
    """γ^1..γ^steps (default n). ``completed`` is False if the trace hit the floor α+ε+τ."""
    steps = cfg.n if steps is None else steps
    big = SMALL if cfg.variant == "small" else BIG
    vals, regs, ok = _trace(big, cfg.alpha, float(cfg.n), max(steps, 1), cfg.start, cfg.shift)
    return GammaTrace(vals, regs, bool(ok), cfg)


def gamma_nn(variant: str, alpha: float, n: int, start: float = 1.0, eps: float = 0.0, tau: float = 0.0) -> float:
    """γ_n^n (after n-1 updates), or -inf if the trace dropped to the floor."""
    tr = gamma_trace(GammaConfig(variant, n, alpha, start, eps, tau))
    return tr.final if tr.completed and len(tr.values) == n else -math.inf


def gamma_sweep(variant: str, alpha: float, n_lo: int, n_hi: int, start: float = 1.0, shift: float = 0.0) -> np.ndarray:
    big = SMALL if variant == "small" else BIG
    return _sweep(big, alpha, n_lo, n_hi, start, shift, 8)


# --- roots -----------------------------------------------------------------


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise RootError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol and hi - lo <= 1e-12:
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    return mid


def big_rho_lhs(alpha: float, rho: float) -> float:
    a3 = 3 * alpha
    return 3 * (a3 - rho - alpha * math.log(a3) + alpha * math.log(rho)) / (4 * alpha) + (
        1 - a3 + (12 * alpha - 3) * math.log(a3)
    ) / (2 * (1 - a3))


def solve_rho(alpha: float, variant: Optional[str] = None) -> float:
    """Limit floor ρ of the γ process: 2(1-ρ+α ln ρ) = 1-α, or its big-α analogue."""
    variant = variant or variant_for(alpha)
    if not 0 < alpha < 1 / 3:
        raise DomainError("alpha must lie in (0, 1/3)")
    hi = 1.0 - 1e-12
    if variant == "small":
        return bisect(lambda r: 2 * (1 - r + alpha * math.log(r)) - (1 - alpha), alpha, hi)
    return bisect(lambda r: big_rho_lhs(alpha, r) - 1.0, alpha, hi)


def alpha_star_equation(a: float) -> float:
    return 2 * (12 * a - 3) * math.log(3 * a) - (1 - 3 * a) * (3 * math.log(3) - 4)


def solve_alpha_star() -> float:
    return bisect(alpha_star_equation, 0.25, 0.3)


def solve_small_items_limit() -> float:
    """Nontrivial root of 1 - ρ + ρ ln ρ = ρ(1 - ρ) (the other root is ρ = 1)."""
    return bisect(lambda r: 1 - r + r * math.log(r) - r * (1 - r), 1e-6, 0.5)


# --- doubling --------------------------------------------------------------


def doubling_threshold(variant: str, alpha: float, n: float, tau: float = 0.0) -> float:
    if variant == "small":
        a = alpha + tau
        return a + (1 - alpha + math.sqrt(16 * n * a * (1 - alpha) + (1 - alpha) ** 2)) / (8 * n)
    if variant == "big":
        return alpha + alpha * (1 + math.sqrt(6 * n + 1)) / (3 * n)
    if variant == "tau":
        return alpha + tau + (alpha + math.sqrt(6 * (alpha + tau) * alpha * n + alpha**2)) / (3 * n)
    raise ValueError(f"unknown doubling variant {variant!r}")


def doubling_holds(variant: str, alpha: float, tau: float, n: float, beta: float) -> bool:
    return beta > doubling_threshold(variant, alpha, n, tau)


def doubling_pointwise(variant: str, alpha: float, n: int, tau: float = 0.0) -> tuple:
    """Compare γ_{2n}^{2i-1} against γ_n^i for i = 1..n.

    Returns (all_ok, worst gap), with gap = γ_{2n}^{2i-1} - γ_n^i (should be <= 0).
    Rounds after either trace stops are not compared.
    """
    base = "small" if variant == "small" else "big"
    a = gamma_trace(GammaConfig(base, n, alpha, tau=tau))
    b = gamma_trace(GammaConfig(base, 2 * n, alpha, tau=tau))
    k = min(len(a.values), (len(b.values) + 1) // 2)
    gaps = b.values[: 2 * k - 1 : 2] - a.values[:k]
    worst = float(gaps.max()) if k else 0.0
    return bool(worst <= 1e-12), worst


# --- epoch sufficiency -------------------------------------------------------


def l_bound(alpha: float, eps: float, gamma: float, tau: float, n: float) -> float:
    """Lower bound on the steps the small-α trace spends going from γ down to γ - τ."""
    return 2 * tau * (gamma - tau - eps - alpha) * n / (gamma * (1 - alpha))


def epoch_sum_condition(alpha: float, eps: float, beta: float, rho: float, d: int, n: int, n0: int) -> tuple:
    lo = math.ceil(rho * d / beta)
    lhs = sum(l_bound(alpha, eps, beta * (r + 1) / d, beta / d, n) for r in range(lo, d))
    rhs = n0 + (d - lo)
    return lhs >= rhs, lhs, rhs


def _small_plain(alpha, eps, beta, rho, d, n, n0):
    q = rho / beta
    lhs = 2 * (beta - rho + (alpha + eps) * math.log(q)) / (1 - alpha)
    rhs = n0 / n + d * (1 - q) / n + 2 * (1 - q) / (q * (q * d + 1)) + 2 * (beta - eps - alpha) / (d * (1 - alpha))
    return lhs, rhs


def _small_refined(alpha, eps, delta, rho, d, n, n0):
    lhs = 2 * (1 - rho + alpha * math.log(rho)) / (1 - alpha)
    rhs = (
        n0 / n + 6 * eps / (1 - alpha) + 2 * delta * (1 - eps / (1 - alpha)) + d * (1 - rho) / n
        + 2 * (1 - rho) / (rho * (rho * d + 1)) + 2 * (1 - delta - eps - alpha) / (d * (1 - alpha))
    )
    return lhs, rhs


def _big_plain(alpha, eps, beta, rho, d, n, n0):
    a3e = 3 * alpha + eps
    q = rho / beta
    s = a3e / beta
    lhs = big_rho_lhs(alpha, rho)
    rhs = (
        n0 / n
        + eps * (1 / alpha + (1 - math.log(3 * alpha)) / (2 * (1 - 3 * alpha)))
        + (1 - beta + (12 * alpha - 3) * math.log(beta)) / (2 * (1 - 3 * alpha))
        + d * (1 - q) / n
        + 3 * (s - q + 1 / d) / (2 * q * (q * d + 1))
        + 3 * (1 - s) / (2 * s * (s * d + 1))
        + 3 * beta * (beta / d + 4 * alpha) / (4 * a3e * alpha * d)
        + (beta - eps - 12 * alpha + 3) / (2 * d * (1 - 3 * alpha))
    )
    return lhs, rhs


def _big_refined(alpha, eps, delta, rho, d, n, n0):
    a3e = 3 * alpha + eps
    lhs = big_rho_lhs(alpha, rho)
    rhs = (
        n0 / n
        + eps * (5 / (4 * alpha) + (1 - math.log(3 * alpha)) / (2 * (1 - 3 * alpha)))
        + 2 * delta
        + d * (1 - rho) / n
        + 3 * (3 - rho + 1 / d) / (2 * rho * (rho * d + 1))
        + 3 * (1 - a3e) / (2 * a3e * (a3e * d + 1))
        + 3 * (1 / d + 4 * alpha) / (4 * a3e * alpha * d)
        + (4 - delta - eps - 12 * alpha) / (2 * d * (1 - 3 * alpha))
    )
    return lhs, rhs


@dataclass
class EpochResult:
    holds: bool
    lhs: float
    rhs: float
    start: float
    floor: float
    verified: Optional[bool] = None
    trace_value: Optional[float] = None


def epoch_sufficiency(
    alpha: float,
    eps: float,
    delta: Optional[float],
    rho: float,
    d: int,
    n: int,
    n0: int,
    variant: str,
    beta: float = 1.0,
    verify: bool = True,
) -> EpochResult:
    """Evaluate the sufficient condition for γ_n^{n0} staying above a floor.

    With ``delta=None`` the plain form is used (start ``beta``, floor ρ); with a
    ``delta`` the refined form applies (start 1-δ, floor ρ+ε). When the condition
    holds and ``verify`` is set, the γ trace is replayed to confirm the floor.
    """
    problems = []
    if variant not in ("small", "big"):
        problems.append(f"variant {variant!r} not in (small, big)")
    if not 1 <= d <= n:
        problems.append(f"need 1 <= d <= n (d={d}, n={n})")
    if n0 < 1:
        problems.append("need n0 >= 1")
    if delta is None:
        if not alpha + eps <= rho < 1:
            problems.append("need alpha + eps <= rho < 1")
        if beta < alpha + eps or beta > 1:
            problems.append("need alpha + eps <= beta <= 1")
    else:
        if not alpha <= rho < 1 - eps:
            problems.append("need alpha <= rho < 1 - eps")
        if not 0 < delta <= 1 - (alpha + eps):
            problems.append("need 0 < delta <= 1 - (alpha + eps)")
    if variant == "big" and not alpha < 1 / 3:
        problems.append("big variant needs alpha < 1/3")
    if problems:
        raise DomainError("; ".join(problems))

    if delta is None:
        fn = _small_plain if variant == "small" else _big_plain
        lhs, rhs = fn(alpha, eps, beta, rho, d, n, n0)
        start, floor = beta, rho
    else:
        fn = _small_refined if variant == "small" else _big_refined
        lhs, rhs = fn(alpha, eps, delta, rho, d, n, n0)
        start, floor = 1 - delta, rho + eps
    res = EpochResult(bool(lhs >= rhs), lhs, rhs, start, floor)
    if res.holds and verify and start > alpha + eps:
        tr = gamma_trace(GammaConfig(variant, n, alpha, start, eps), steps=n0)
        val = tr.final if tr.completed and len(tr.values) == n0 else -math.inf
        res.trace_value = val
        res.verified = val >= floor - 1e-12
    return res


# --- schedules -------------------------------------------------------------


@dataclass
class Schedule:
    c: float
    eps: float
    D: float
    alpha_prime: float
    rho: float


def default_schedule(alpha: float, n: int) -> Schedule:
    """Parameter choice c, ε, D as functions of n used for the asymptotic guarantee."""
    if n < 2:
        raise DomainError("schedule needs n >= 2")
    ln = math.log(n)
    rho = solve_rho(alpha)
    ap = alpha + (rho - alpha) / 2
    if variant_for(alpha) == "small":
        k = 5 * (1 - ap) / (rho - ap)
        c = k * ln**-3
        eps = 7 * math.sqrt(4 * c * (1 - ap) / (rho - ap) * ln)
    else:
        k = 40 * ap / (3 * (rho - ap))
        c = k * ln**-3
        eps = 17 * math.sqrt(2 * c * ap / (rho - ap) * ln)
    return Schedule(c, eps, k**2 * math.sqrt(n), ap, rho)
