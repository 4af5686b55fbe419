"""HTTP service over the library. Run with ``uvicorn fairdiv.service:app``."""
from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import processes as P
from .bigitems import DEFAULT_EPS, BigItemGraph, classify_cases
from .core import GeneratorSpec, Instance, generate_instance, instance_from_dict, instance_to_dict
from .errors import CapacityError, DomainError, ExhaustedError, FairDivError, InputError, RootError, ValidationError
from .pipeline import run_pipeline, verify_allocation
from .randomized import RunParams
from .shares import compute_aps, compute_mms


class InstanceModel(BaseModel):
    n: int = Field(ge=1)
    m: int = Field(ge=0)
    valuations: list[list[list[float]]]

    def build(self) -> Instance:
        return instance_from_dict(self.model_dump())


class ShareRequest(BaseModel):
    instance: InstanceModel
    agent: Optional[int] = None


class AllocRequest(BaseModel):
    instance: InstanceModel
    alpha: float = Field(gt=0, lt=1)
    mode: Literal["identical", "different", "full"] = "full"
    c: Optional[float] = None
    D: Optional[float] = None
    seed: int = 0
    eps: float = DEFAULT_EPS


class ClassifyRequest(BaseModel):
    instance: InstanceModel
    alpha: float = Field(gt=0, lt=1)
    eps: float = DEFAULT_EPS


class VerifyRequest(BaseModel):
    instance: InstanceModel
    bundles: list[list[int]]
    alpha: float = Field(gt=0, lt=1)
    share: Literal["aps", "mms"] = "aps"


class GenRequest(BaseModel):
    spec: dict
    seed: int


app = FastAPI(title="fairdiv")

# library error -> HTTP status; 422 mirrors the CLI's input-error exit code
STATUS = ((ExhaustedError, 409), ((InputError, ValidationError, DomainError, RootError, CapacityError), 422), (FairDivError, 500))


def _guard(fn):
    try:
        return fn()
    except FairDivError as exc:
        for kinds, code in STATUS:
            if isinstance(exc, kinds):
                raise HTTPException(code, detail={"error": type(exc).__name__, "message": str(exc),
                                                  "stage": getattr(exc, "stage", None)}) from None
        raise


def _shares(req: ShareRequest, fn) -> dict:
    inst = req.instance.build()
    ids = range(inst.n) if req.agent is None else [req.agent]
    if any(not 0 <= i < inst.n for i in ids):
        raise InputError(f"agent must lie in [0, {inst.n})")
    return {"values": {str(i): fn(inst.valuations[i], inst.n).value for i in ids}}


@app.post("/aps")
def aps(req: ShareRequest) -> dict:
    return _guard(lambda: _shares(req, compute_aps))


@app.post("/mms")
def mms(req: ShareRequest) -> dict:
    return _guard(lambda: _shares(req, compute_mms))


@app.post("/alloc")
def alloc(req: AllocRequest) -> dict:
    def go():
        inst = req.instance.build()
        params = None
        if req.c is not None and req.D is not None:
            params = RunParams(req.alpha, req.c, req.D, req.seed)
        elif req.mode != "identical" and inst.n >= 2:
            params = RunParams.default_schedule(req.alpha, inst.n, req.seed)
        return run_pipeline(inst, req.alpha, req.mode, params, req.eps).to_json()

    return _guard(go)


@app.post("/classify")
def classify(req: ClassifyRequest) -> dict:
    def go():
        inst = req.instance.build()
        return classify_cases(BigItemGraph.from_instance(inst, req.alpha), req.eps).to_json()

    return _guard(go)


@app.post("/verify")
def verify(req: VerifyRequest) -> dict:
    return _guard(lambda: verify_allocation(req.instance.build(), req.bundles, req.alpha, req.share).to_json())


@app.post("/gen")
def gen(req: GenRequest) -> dict:
    return _guard(lambda: instance_to_dict(generate_instance(GeneratorSpec.from_dict(req.spec), req.seed)))


@app.get("/roots")
def roots(alpha: Optional[float] = None) -> dict:
    def go():
        doc = {"alpha_star": P.solve_alpha_star(), "small_items_limit": P.solve_small_items_limit()}
        if alpha is not None:
            doc["rho"] = P.solve_rho(alpha)
        return doc

    return _guard(go)
