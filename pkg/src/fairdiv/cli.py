"""Command-line front end. Every float is printed with 12 significant digits."""
from __future__ import annotations

import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Callable, Sequence

import click
import numpy as np

from . import processes as P
from .bigitems import BigItemGraph, classify_cases
from .core import GeneratorSpec, generate_instance, instance_to_dict, load_instance
from .errors import CapacityError, DomainError, ExhaustedError, FairDivError, InputError, RootError, ValidationError
from .pipeline import MODES, run_pipeline, verify_allocation
from .randomized import RunParams
from .shares import compute_aps, compute_mms

EXIT_OK, EXIT_VERIFY, EXIT_EXHAUSTED, EXIT_INPUT = 0, 2, 3, 4


def fmt(x) -> str:
    return f"{x:.12g}"


def rounded(obj):
    """Copy of a JSON-ready object with floats cut to 12 significant digits."""
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else obj
    if isinstance(obj, (np.floating,)):
        return rounded(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    return obj


def emit(doc) -> None:
    click.echo(json.dumps(rounded(doc), sort_keys=False))


def threads() -> int:
    raw = os.environ.get("FAIRDIV_THREADS", "")
    try:
        return max(1, int(raw)) if raw else max(1, os.cpu_count() or 1)
    except ValueError:
        raise InputError(f"FAIRDIV_THREADS must be an integer, got {raw!r}") from None


def fan_out(fn: Callable, xs: Sequence) -> list:
    """Map in worker threads; results come back in input order."""
    k = min(threads(), len(xs))
    if k <= 1:
        return [fn(x) for x in xs]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, xs))


class Num(click.ParamType):
    name = "number"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            return float(Fraction(str(value)))
        except (ValueError, ZeroDivisionError):
            self.fail(f"not a number or fraction: {value!r}", param, ctx)


NUM = Num()


def read_instance(path: str):
    try:
        with open(path, "rb") as fh:
            return load_instance(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in r])


class Main(click.Group):
    """Maps library errors and usage errors to exit codes."""

    def main(self, args=None, prog_name=None, **extra):
        extra.pop("standalone_mode", None)
        try:
            rv = super().main(args, prog_name, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_INPUT)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ExhaustedError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_EXHAUSTED)
        except (InputError, ValidationError, DomainError, RootError, CapacityError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INPUT)
        except FairDivError as exc:
            stage = getattr(exc, "stage", None)
            click.echo(f"error{f' [{stage}]' if stage else ''}: {type(exc).__name__}: {exc}", err=True)
            ctx.exit(1)


@click.group(cls=Main)
def main():
    """Fair division of indivisible goods under XOS valuations."""


def _share_cmd(kind: str, path: str, agent):
    inst = read_instance(path)
    ids = list(range(inst.n)) if agent is None else [agent]
    if any(not 0 <= i < inst.n for i in ids):
        raise InputError(f"agent must lie in [0, {inst.n})")
    fn = compute_aps if kind == "aps" else compute_mms
    vals = fan_out(lambda i: fn(inst.valuations[i], inst.n).value, ids)
    emit({"share": kind, "values": {str(i): v for i, v in zip(ids, vals)}})


@main.command()
@click.argument("inst", type=click.Path())
@click.option("--agent", type=int, default=None)
def aps(inst, agent):
    """Anyprice share of every agent (or one)."""
    _share_cmd("aps", inst, agent)


@main.command()
@click.argument("inst", type=click.Path())
@click.option("--agent", type=int, default=None)
def mms(inst, agent):
    """Maximin share of every agent (or one)."""
    _share_cmd("mms", inst, agent)


@main.command()
@click.argument("inst", type=click.Path())
@click.option("--alpha", type=NUM, required=True)
@click.option("--mode", type=click.Choice(MODES), default="full", show_default=True)
@click.option("--c", "c", type=NUM, default=None)
@click.option("--D", "D", type=NUM, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--eps", type=NUM, default=Fraction(1, 240), show_default="1/240", help="classifier ε")
@click.option("-o", "--out", type=click.Path(), default=None, help="write the allocation here")
def alloc(inst, alpha, mode, c, D, seed, eps, out):
    """Allocate and verify against APS; exit 2 if some agent falls short."""
    x = read_instance(inst)
    params = None
    if c is not None or D is not None:
        if c is None or D is None:
            raise InputError("--c and --D go together")
        params = RunParams(alpha, c, D, seed)
    elif mode != "identical" and x.n >= 2:
        params = RunParams.default_schedule(alpha, x.n, seed)
    rep = run_pipeline(x, alpha, mode, params, float(eps))
    doc = rep.to_json()
    if out:
        with open(out, "w") as fh:
            json.dump(rounded(rep.allocation.to_json()), fh)
    emit(doc)
    if not rep.verification.passed:
        sys.exit(EXIT_VERIFY)


@main.command()
@click.option("--variant", type=click.Choice(["small", "big", "eps", "tau"]), required=True)
@click.option("--alpha", type=NUM, required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--eps", type=NUM, default=0.0)
@click.option("--delta", type=NUM, default=0.0, help="start at 1 - delta")
@click.option("--tau", type=NUM, default=0.0)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def gamma(variant, alpha, n, eps, delta, tau, csv_path):
    """γ trace for n agents; eps and tau pick the shifted variants for the α's side of 3/11."""
    base = variant if variant in ("small", "big") else P.variant_for(alpha)
    e = eps if variant == "eps" else 0.0
    t = tau if variant == "tau" else 0.0
    cfg = P.GammaConfig(base, n, alpha, 1.0 - delta, e, t)
    tr = P.gamma_trace(cfg)
    if csv_path:
        write_csv(csv_path, ["k", "gamma", "regime"], [(k + 1, float(g), int(r)) for k, (g, r) in enumerate(zip(tr.values, tr.regimes))])
    emit({"variant": variant, "base": base, "n": n, "steps": len(tr.values), "final": tr.final, "completed": tr.completed,
          "floor": alpha + e + t, "above_alpha": bool(tr.completed and tr.final >= alpha)})


@main.command()
@click.option("--alpha", type=NUM, required=True)
@click.option("--n", "n", type=NUM, required=True)
@click.option("--points", type=int, default=1000, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def pt(alpha, n, points, csv_path):
    """Per-item probability bound p as a function of β on (α, 1]."""
    ts = np.linspace(alpha, 1.0, points + 1)[1:]
    rows = P.pt_curve(alpha, n, ts)
    if csv_path:
        write_csv(csv_path, ["beta", "p"], rows)
    emit({"alpha": alpha, "n": n, "points": points, "p_at_1": rows[-1][1], "p_max": rows[0][1]})


@main.command()
@click.option("--alpha", type=NUM, default=None)
def roots(alpha):
    """α*, the small-item limit, and ρ(α) when α is given."""
    doc = {"alpha_star": P.solve_alpha_star(), "small_items_limit": P.solve_small_items_limit()}
    if alpha is not None:
        doc["alpha"] = alpha
        doc["variant"] = P.variant_for(alpha)
        doc["rho"] = P.solve_rho(alpha)
    emit(doc)


@main.command()
@click.option("--variant", type=click.Choice(["small", "big", "tau"]), required=True)
@click.option("--alpha", type=NUM, required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--tau", type=NUM, default=0.0)
@click.option("--delta", type=NUM, default=None, help="also test the threshold at β = α + δ")
def doubling(variant, alpha, n, tau, delta):
    """Doubling threshold at n and the pointwise γ_2n versus γ_n comparison."""
    thr = P.doubling_threshold(variant, alpha, n, tau)
    ok, worst = P.doubling_pointwise(variant, alpha, n, tau)
    doc = {"variant": variant, "alpha": alpha, "n": n, "threshold": thr, "pointwise": ok, "worst_gap": worst}
    if delta is not None:
        doc["holds"] = P.doubling_holds(variant, alpha, tau, n, alpha + delta)
    emit(doc)


@main.command()
@click.argument("inst", type=click.Path())
@click.option("--alpha", type=NUM, required=True)
@click.option("--eps", type=NUM, default=Fraction(1, 240), show_default="1/240")
def classify(inst, alpha, eps):
    """Build the big-item graph and report its case with payload."""
    x = read_instance(inst)
    scales = fan_out(lambda v: compute_aps(v, x.n).value, list(x.valuations))
    G = BigItemGraph.from_instance(x, alpha, scales)
    res = classify_cases(G, float(eps))
    emit({"edges": sum(len(a) for a in G.adj), "scales": scales, **res.to_json()})


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--seed", type=int, required=True)
@click.option("-o", "--out", type=click.Path(), default=None)
def gen(spec_path, seed, out):
    """Generate an instance from a JSON generator spec."""
    try:
        with open(spec_path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {spec_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid spec JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError("spec must be a JSON object")
    try:
        spec = GeneratorSpec.from_dict(doc)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    text = json.dumps(instance_to_dict(generate_instance(spec, seed)))
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text)


@main.command()
@click.argument("inst", type=click.Path())
@click.argument("allocation", type=click.Path())
@click.option("--alpha", type=NUM, required=True)
@click.option("--share", type=click.Choice(["aps", "mms"]), default="aps", show_default=True)
def verify(inst, allocation, alpha, share):
    """Check an allocation file; exit 2 if some agent falls short of α·share."""
    x = read_instance(inst)
    try:
        with open(allocation) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {allocation}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid allocation JSON: {exc.msg}") from None
    bundles = doc.get("bundles") if isinstance(doc, dict) else doc
    if not isinstance(bundles, list) or not all(isinstance(b, list) for b in bundles):
        raise InputError("allocation must be {\"bundles\": [[items], ...]} or a list of item lists")
    if any(isinstance(e, bool) or not isinstance(e, int) for b in bundles for e in b):
        raise InputError("bundle entries must be integers")
    rep = verify_allocation(x, bundles, alpha, share)
    emit(rep.to_json())
    if not rep.passed:
        sys.exit(EXIT_VERIFY)


if __name__ == "__main__":
    main()
