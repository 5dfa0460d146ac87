"""Finite-difference verification of analytic gradients.

The checker evaluates a scalar-valued closure, runs backward(), then probes
parameter coordinates with central differences (f(p+eps) - f(p-eps)) / 2eps and
compares. Large parameters are subsampled with a seeded generator so the cost
stays bounded; the sample is reproducible.

Everything runs in float64. Central differences at float32 drown in rounding
noise long before the 1e-4 tolerance this package cares about, so passing a
float32 parameter is treated as a usage error rather than silently reporting
garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor, no_grad, rng

REL_ERR_FLOOR = 1e-8


@dataclass
class GradReport:
    """Outcome of one finite_diff_check run."""

    passed: bool
    max_rel_err: float
    epsilon: float
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)
    worst_param: str = ""
    coords_checked: int = 0

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {verdict}: max_rel_err={self.max_rel_err:.3e} "
                f"(worst={self.worst_param}, tol={self.tolerance:.1e}, "
                f"eps={self.epsilon:.1e}, coords={self.coords_checked})")


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)


def finite_diff_check(fn, params: dict[str, Tensor], epsilon: float = 1e-5,
                      tolerance: float = 1e-4, max_coords: int = 64,
                      seed: int = 0) -> GradReport:
    """Compare backward() gradients of fn() against central differences.

    fn is a zero-argument closure over `params` that rebuilds its forward pass
    on every call and returns a scalar Tensor. It must be deterministic: any
    randomness (dropout-style masks, sampled batches) has to be frozen outside.

    At most `max_coords` coordinates per parameter are probed, chosen without
    replacement by a generator seeded with `seed`.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(
                f"finite_diff_check requires float64 parameters; {name!r} is {p.dtype}")

    for p in params.values():
        p.zero_grad()
    loss = fn()
    if loss.shape != ():
        raise ValueError(f"fn() must return a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NumericError(f"fn() returned non-finite loss {loss.data!r}")
    loss.backward()

    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    sampler = rng(seed)
    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = sampler.choice(n, size=max_coords, replace=False)
        err = 0.0
        for c in coords:
            saved = flat[c]
            with no_grad():
                flat[c] = saved + epsilon
                hi = fn().item()
                flat[c] = saved - epsilon
                lo = fn().item()
            flat[c] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(
                    f"fn() non-finite while perturbing {name}[{c}]: {hi!r}/{lo!r}")
            numeric = (hi - lo) / (2.0 * epsilon)
            err = max(err, relative_error(analytic[name].reshape(-1)[c], numeric))
            checked += 1
        per_param[name] = err
        if err >= worst[1]:
            worst = (name, err)

    max_err = max(per_param.values()) if per_param else 0.0
    return GradReport(passed=max_err < tolerance, max_rel_err=max_err,
                      epsilon=epsilon, tolerance=tolerance, per_param=per_param,
                      worst_param=worst[0], coords_checked=checked)
