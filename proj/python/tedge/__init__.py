"""Python bindings for the tedge edge-caching benchmark."""

from ._tedge import (
    count_params,
    gaf_encode,
    label_top_k,
    mzipf_pmf,
    preset_model,
    run_stage,
    sample_skewness,
    simulate_optimal,
    simulate_reactive,
)

__all__ = [
    "count_params",
    "gaf_encode",
    "label_top_k",
    "mzipf_pmf",
    "preset_model",
    "run_stage",
    "sample_skewness",
    "simulate_optimal",
    "simulate_reactive",
]
