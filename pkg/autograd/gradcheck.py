"""Central-difference verification of tape gradients."""

from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from loguru import logger

from core.errors import ContractError
from models.schemas import GradCheckReport, ParamCheck

from .tensor import Tape, Tensor, backward, no_grad, numeric_mode, zero_grad

Params = Union[Mapping[str, Tensor], Sequence[Tensor]]


def _named(params: Params) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param{i}"): p for i, p in enumerate(params)}


def _evaluate(f: Callable[[], Tensor]) -> np.ndarray:
    with no_grad():
        out = f()
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    return np.array(out.data, copy=True).reshape(())


def _pick_entries(analytic: np.ndarray, limit: Optional[int], rng: np.random.Generator) -> np.ndarray:
    size = analytic.size
    if limit is None or size <= limit:
        return np.arange(size)
    flat = analytic.reshape(-1)
    nonzero = np.flatnonzero(flat != 0)
    zero = np.flatnonzero(flat == 0)
    take = min(limit, nonzero.size)
    chosen = rng.choice(nonzero, size=take, replace=False) if take else np.empty(0, dtype=np.int64)
    if take < limit:
        chosen = np.concatenate([chosen, rng.choice(zero, size=limit - take, replace=False)])
    return np.sort(chosen)


def grad_check(
    f: Callable[[], Tensor],
    params: Params,
    h: float = 1e-3,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    atol: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` takes no arguments and closes over ``params``; it must be
    deterministic and every parameter must be float64. Relative error is
    ``|a - n| / max(|a|, |n|, atol)``. At most ``max_entries`` entries per
    tensor are perturbed, preferring entries with a nonzero tape gradient.
    """
    named = _named(params)
    for name, p in named.items():
        if p.dtype != np.float64:
            raise ContractError(f"grad_check needs float64 parameters; '{name}' is {p.dtype}")

    with numeric_mode(np.float64):
        zero_grad(named.values())
        with Tape():
            loss = f()
        if loss.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
        backward(loss)
        analytic = {
            name: (np.array(p.grad, copy=True) if p.grad is not None else np.zeros_like(p.data)) for name, p in named.items()
        }
        zero_grad(named.values())

        first = _evaluate(f)
        second = _evaluate(f)
        if not (np.array_equal(first, second) and np.array_equal(first, loss.data.reshape(()))):
            raise ContractError("grad_check function is not deterministic: two forward evaluations differ")

        rng = np.random.default_rng(seed)
        checks: List[ParamCheck] = []
        for name, p in named.items():
            grad = analytic[name]
            entries = _pick_entries(grad, max_entries, rng)
            worst = 0.0
            for idx in entries:
                at = np.unravel_index(idx, p.shape)
                original = p.data[at]
                p.data[at] = original + h
                plus = float(_evaluate(f))
                p.data[at] = original - h
                minus = float(_evaluate(f))
                p.data[at] = original
                numeric = (plus - minus) / (2.0 * h)
                a = float(grad.reshape(-1)[idx])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), atol)
                worst = max(worst, rel)
            checks.append(
                ParamCheck(
                    name=name,
                    shape=tuple(p.shape),
                    checked_entries=int(entries.size),
                    max_rel_error=worst,
                    passed=worst <= tol,
                )
            )

    report = GradCheckReport(h=h, tol=tol, params=checks)
    logger.bind(component="grad_check").info(
        f"Checked {len(checks)} parameter tensors: max relative error {report.max_rel_error:.3e} (tol {tol:g})"
    )
    return report
