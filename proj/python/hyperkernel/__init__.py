"""Infinite-width hypernetwork kernels (C++ core, Python bindings)."""

from ._hyperkernel import (
    Hypernet,
    HyperkernelError,
    __version__,
    dual_relu,
    dual_relu_dot,
    fit_loglog,
    fit_predict,
    fourier_features,
    fourier_limit_kernel,
    hyper_gram,
    hyper_nngp,
    hyper_ntk,
    load_idx,
    mc_dual,
    mlp_nngp,
    mlp_ntk,
    rng_name,
    synthetic_images,
)

__all__ = [
    "Hypernet",
    "HyperkernelError",
    "__version__",
    "dual_relu",
    "dual_relu_dot",
    "fit_loglog",
    "fit_predict",
    "fourier_features",
    "fourier_limit_kernel",
    "hyper_gram",
    "hyper_nngp",
    "hyper_ntk",
    "load_idx",
    "mc_dual",
    "mlp_nngp",
    "mlp_ntk",
    "rng_name",
    "synthetic_images",
]
