"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst_parameter: str | None = None
    per_parameter: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def by_group(self) -> dict[str, float]:
        """Worst error per parameter group (name prefix before the first dot)."""
        out: dict[str, float] = {}
        for name, err in self.per_parameter.items():
            group = name.split(".", 1)[0]
            out[group] = max(out.get(group, 0.0), err)
        return out


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.longdouble)
    b = np.asarray(b, dtype=np.longdouble)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _value(t: Tensor) -> np.longdouble:
    # keep full precision so long-double runs get long-double differences
    return np.longdouble(np.asarray(t.data).reshape(()))


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` with ``(f(x+h) - f(x-h)) / 2h``.

    ``fn`` must rebuild the loss from the current parameter values on every
    call.  Tensors larger than ``max_per_param`` are checked on a seeded random
    subset of their entries.
    """
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    report = GradCheckReport(tol=tol)
    if not params:
        return report

    with Tape() as tape:
        loss = fn()
    tape.backward(loss, list(params.values()))
    reference = _value(loss)
    repeat = _value(fn())
    if repeat != reference:
        raise ContractError(f"grad_check: function is not deterministic ({reference!r} vs {repeat!r})")

    rng = np.random.default_rng(seed)
    for name, p in params.items():
        analytic = np.array(p.grad, dtype=np.longdouble)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        numeric = np.empty(idx.size, dtype=np.longdouble)
        for out_i, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = _value(fn())
            flat[i] = orig - h
            down = _value(fn())
            flat[i] = orig
            numeric[out_i] = (up - down) / (2 * h)
        err = float(relative_error(analytic.reshape(-1)[idx], numeric).max()) if idx.size else 0.0
        report.per_parameter[name] = err
        report.checked += idx.size
        if report.worst_parameter is None or err > report.max_rel_err:
            report.max_rel_err = err
            report.worst_parameter = name
    return report
