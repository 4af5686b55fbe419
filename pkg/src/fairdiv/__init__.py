"""Approximate anyprice-share allocation of indivisible goods under XOS valuations."""
from .core import Allocation, GeneratorSpec, Instance, XOSValuation, generate_instance, load_instance, save_instance
from .errors import FairDivError
from .pipeline import run_pipeline, verify_allocation
from .shares import compute_aps, compute_mms, normalize_aps

__all__ = [
    "Allocation",
    "FairDivError",
    "GeneratorSpec",
    "Instance",
    "XOSValuation",
    "compute_aps",
    "compute_mms",
    "generate_instance",
    "load_instance",
    "normalize_aps",
    "run_pipeline",
    "save_instance",
    "verify_allocation",
]
