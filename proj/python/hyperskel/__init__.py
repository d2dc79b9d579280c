"""Poincare-ball geometry, weighted Frechet means and the skeleton/text trainer."""

from ._core import (
    DimensionError,
    DomainError,
    check_grads,
    clip_tangent,
    conformal_factor,
    dist,
    dist0,
    dump_config,
    expmap,
    expmap0,
    frechet_mean,
    gen_data,
    logmap,
    logmap0,
    mobius_add,
    mobius_matvec,
    project_to_ball,
    registered_ops,
    train,
)

__version__ = "0.1.0"
