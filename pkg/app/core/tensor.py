"""
Dense tensors with reverse-mode gradient recording.

A `Tensor` wraps a row-major numpy array. Differentiable primitives are
`Function` subclasses; when a `GradTape` is passed to `Function.apply` the
call is appended to the tape, and `GradTape.backward` replays the records in
exact reverse order to produce a gradient for every requested parameter.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ContractError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32


class Tensor:
    """
    Dense n-dimensional array plus autograd bookkeeping.

    Tensors compare by identity, so they can key gradient dictionaries.
    """

    __slots__ = ("data", "requires_grad", "name", "creator")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[Any] = DEFAULT_DTYPE,
    ):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.creator: Optional["Function"] = None

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an op result, keeping its floating dtype"""
        return cls(arr, requires_grad=requires_grad, dtype=None)

    @classmethod
    def parameter(cls, data: Any, name: str, dtype: Any = DEFAULT_DTYPE) -> "Tensor":
        return cls(data, requires_grad=True, name=name, dtype=dtype)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"


class Function:
    """
    Base class for differentiable operations.

    `forward` receives the numpy arrays of the input tensors and returns the
    output array; `backward` receives dL/d(output) and returns one gradient
    per input (None for inputs that need none).
    """

    name = "function"

    def __init__(self, *tensors: Tensor):
        self.inputs: Tuple[Tensor, ...] = tensors
        self.saved: Dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: Tensor, tape: Optional["GradTape"] = None, **kwargs: Any) -> Tensor:
        fn = cls(*tensors)
        out_data = fn.forward(*(t.data for t in tensors), **kwargs)
        out = Tensor.wrap(out_data, requires_grad=any(t.requires_grad for t in tensors))
        out.creator = fn
        if tape is not None:
            tape.record(fn, out)
        return out


@dataclass
class TapeRecord:
    fn: Function
    output: Tensor


@dataclass
class GradTape:
    """
    Ordered record of executed primitives.

    A tape is single-writer: build it, run one forward pass through it and
    call `backward` once, all from the same thread.
    """

    records: List[TapeRecord] = field(default_factory=list)
    backward_trace: List[str] = field(default_factory=list)

    def record(self, fn: Function, output: Tensor) -> None:
        self.records.append(TapeRecord(fn=fn, output=output))

    @property
    def ops(self) -> List[str]:
        return [r.fn.name for r in self.records]

    def _produced(self, t: Tensor) -> bool:
        return any(r.output is t for r in self.records)

    def backward(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
        """
        Gradients of a scalar loss with respect to `params`.

        When `params` is omitted every leaf tensor with requires_grad seen on
        the tape is returned. Parameters the loss does not depend on get zeros.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

        if params is None:
            seen: Dict[int, Tensor] = {}
            for rec in self.records:
                for t in rec.fn.inputs:
                    if t.requires_grad and t.creator is None:
                        seen.setdefault(id(t), t)
            wanted = list(seen.values())
        else:
            wanted = list(params)

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if not self._produced(loss) and not any(p is loss for p in wanted):
            raise ContractError("loss was not produced by an operation on this tape")

        self.backward_trace = []
        for rec in reversed(self.records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            self.backward_trace.append(rec.fn.name)
            in_grads = rec.fn.backward(g_out)
            for t, g in zip(rec.fn.inputs, in_grads):
                if g is None or not (t.requires_grad or t.creator is not None):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

        result: Dict[Tensor, np.ndarray] = {}
        for p in wanted:
            g = grads.get(id(p))
            result[p] = np.zeros_like(p.data) if g is None else g.reshape(p.shape).astype(p.data.dtype, copy=False)
        return result


def backward(tape: GradTape, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Functional alias of `GradTape.backward`"""
    return tape.backward(loss, params)


# ============================================================================
# FINITE-DIFFERENCE CHECK
# ============================================================================

@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None


def _is_kink(f_plus: float, f_minus: float, f_zero: float, f_half_plus: float,
             f_half_minus: float, eps: float) -> bool:
    """
    True when a non-differentiable point lies inside [θ−ε, θ+ε].

    A smooth function has one-sided slopes that differ by about ε·|f''| and
    central differences at ε and ε/2 that differ by about ε²·|f'''|/8; a kink
    breaks one of the two.
    """
    forward = (f_plus - f_zero) / eps
    backward_ = (f_zero - f_minus) / eps
    central = (f_plus - f_minus) / (2 * eps)
    central_half = (f_half_plus - f_half_minus) / eps
    scale = max(1.0, abs(central))
    if abs(central - central_half) > 1e-6 * scale:
        return True
    return abs(forward - backward_) > 1e-2 * scale


def grad_check_detailed(
    fn: Callable[[Optional[GradTape]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    scale_floor: float = 1.0,
) -> GradCheckResult:
    """
    Compare analytic gradients of `fn` against central differences.

    `fn(tape)` must rebuild the scalar loss from `params` every call. The
    parameters are promoted to float64 for the duration of the check and
    restored afterwards; each coordinate is compared with
    (f(θ+ε) − f(θ−ε)) / 2ε. Coordinates whose ε-neighbourhood contains a kink
    are skipped.
    """
    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")

    originals = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)

        def evaluate() -> float:
            return fn(None).item()

        tape = GradTape()
        loss = fn(tape)
        analytic = tape.backward(loss, params)
        f_zero = loss.item()

        worst = 0.0
        worst_at: Optional[Tuple[str, Tuple[int, ...]]] = None
        checked = skipped = 0
        for p in params:
            flat = p.data.reshape(-1)
            grad_flat = analytic[p].reshape(-1)
            for i in range(flat.size):
                base = flat[i]
                flat[i] = base + eps
                f_plus = evaluate()
                flat[i] = base - eps
                f_minus = evaluate()
                flat[i] = base + eps / 2
                f_half_plus = evaluate()
                flat[i] = base - eps / 2
                f_half_minus = evaluate()
                flat[i] = base

                if _is_kink(f_plus, f_minus, f_zero, f_half_plus, f_half_minus, eps):
                    skipped += 1
                    continue

                numeric = (f_plus - f_minus) / (2 * eps)
                a = float(grad_flat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
                checked += 1
                if rel > worst:
                    worst = rel
                    worst_at = (p.name or "param", tuple(int(j) for j in np.unravel_index(i, p.shape)))

        logger.debug(
            "grad_check finished",
            extra={"max_rel_error": worst, "checked": checked, "skipped": skipped}
        )
        return GradCheckResult(max_rel_error=worst, checked=checked, skipped=skipped, worst=worst_at)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig


def grad_check(
    fn: Callable[[Optional[GradTape]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
) -> float:
    """Worst relative error between analytic and central-difference gradients"""
    return grad_check_detailed(fn, params, eps).max_rel_error
