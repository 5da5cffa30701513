# Copyright 2026 The retlab Authors.
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the retlab C++ library."""

from ._core import (
    __version__,
    flow_min_layers,
    flow_min_layers_closed_form,
    flow_depth_lower_bound,
    flow_trace,
    generate_examples,
    train,
    bench_generate,
    bench_solve,
    bench_grade,
)

__all__ = [
    "__version__",
    "flow_min_layers",
    "flow_min_layers_closed_form",
    "flow_depth_lower_bound",
    "flow_trace",
    "generate_examples",
    "train",
    "bench_generate",
    "bench_solve",
    "bench_grade",
]
