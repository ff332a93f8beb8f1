"""
Differentiable primitives.

The five layer primitives of the embedder (dense, 3×3 convolution, relu,
2×2 max-pool, row-wise L2 normalization) plus the reshape/sum glue and the
loss heads used by training. Every op checks shapes explicitly; there is no
broadcasting beyond bias addition.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import BatchCompositionError, ContractError, DegenerateEmbeddingError, DimensionError
from app.core.tensor import Function, GradTape, Tensor

NORM_FLOOR = 1e-12


# ============================================================================
# LAYER PRIMITIVES
# ============================================================================

class Dense(Function):
    name = "dense"

    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or w.ndim != 2 or b.ndim != 1 or x.shape[1] != w.shape[0] or b.shape[0] != w.shape[1]:
            raise DimensionError("dense", x.shape, w.shape, b.shape)
        self.saved["x"] = x
        self.saved["w"] = w
        return x @ w + b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x, w = self.saved["x"], self.saved["w"]
        return grad @ w.T, x.T @ grad, grad.sum(axis=0)


def im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """(B, C, H+2, W+2) padded input → (B, C·9, H·W) patch matrix, kernel offsets row-major"""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, 3, 3, h, w), dtype=xp.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(b, c * 9, h * w)


class Conv2d(Function):
    """3×3 cross-correlation, stride 1, zero padding 1"""

    name = "conv2d"

    def forward(self, x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or k.ndim != 4 or b.ndim != 1:
            raise DimensionError("conv2d", x.shape, k.shape, b.shape, reason="expected B×C×H×W input and F×C×3×3 kernel")
        if k.shape[2:] != (3, 3):
            raise DimensionError("conv2d", k.shape, reason="kernel must be 3×3")
        if x.shape[1] != k.shape[1]:
            raise DimensionError("conv2d", x.shape, k.shape, reason="channel mismatch")
        if b.shape[0] != k.shape[0]:
            raise DimensionError("conv2d", k.shape, b.shape, reason="bias length must equal filter count")

        bsz, c, h, w = x.shape
        f = k.shape[0]
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = im2col(xp, h, w)
        k2 = k.reshape(f, c * 9)
        out = np.matmul(k2, cols) + b[None, :, None]
        self.saved.update(cols=cols, k2=k2, shape=(bsz, c, h, w))
        return out.reshape(bsz, f, h, w)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        cols, k2 = self.saved["cols"], self.saved["k2"]
        bsz, c, h, w = self.saved["shape"]
        f = k2.shape[0]
        g2 = grad.reshape(bsz, f, h * w)

        gk = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, 3, 3)
        gb = grad.sum(axis=(0, 2, 3))

        gcols = np.matmul(k2.T, g2).reshape(bsz, c, 3, 3, h, w)
        gxp = np.zeros((bsz, c, h + 2, w + 2), dtype=gcols.dtype)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i:i + h, j:j + w] += gcols[:, :, i, j]
        return gxp[:, :, 1:-1, 1:-1], gk, gb


class Relu(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        mask = x > 0
        self.saved["mask"] = mask
        return np.where(mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.saved["mask"],)


class MaxPool2(Function):
    """2×2 window, stride 2; ties route to the first cell in row-major order"""

    name = "maxpool2"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise DimensionError("maxpool2", x.shape, reason="expected B×C×H×W")
        bsz, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError("maxpool2", x.shape, reason="spatial dims must be even")
        windows = (
            x.reshape(bsz, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bsz, c, h // 2, w // 2, 4)
        )
        arg = windows.argmax(axis=-1)
        self.saved.update(arg=arg, shape=x.shape)
        return np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        arg = self.saved["arg"]
        bsz, c, h, w = self.saved["shape"]
        routed = np.zeros(arg.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(routed, arg[..., None], grad[..., None], axis=-1)
        gx = (
            routed.reshape(bsz, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bsz, c, h, w)
        )
        return (gx,)


class L2Normalize(Function):
    name = "l2_normalize"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2:
            raise DimensionError("l2_normalize", x.shape, reason="expected B×D")
        norms = np.sqrt((x.astype(np.float64) ** 2).sum(axis=1, keepdims=True)).astype(x.dtype)
        bad = np.flatnonzero(norms[:, 0] < NORM_FLOOR)
        if bad.size:
            raise DegenerateEmbeddingError(bad.tolist())
        y = x / norms
        self.saved.update(y=y, norms=norms)
        return y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        y, norms = self.saved["y"], self.saved["norms"]
        return ((grad - y * (grad * y).sum(axis=1, keepdims=True)) / norms,)


class Reshape(Function):
    name = "reshape"

    def forward(self, x: np.ndarray, shape: Sequence[int] = ()) -> np.ndarray:
        self.saved["shape"] = x.shape
        return x.reshape(tuple(shape))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad.reshape(self.saved["shape"]),)


class Sum(Function):
    name = "sum"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.saved["shape"] = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.full(self.saved["shape"], grad.reshape(-1)[0], dtype=grad.dtype),)


class WeightedSum(Function):
    """Σ x·c for a constant array c of the same shape"""

    name = "weighted_sum"

    def forward(self, x: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        if weights is None or weights.shape != x.shape:
            raise DimensionError("weighted_sum", x.shape, () if weights is None else weights.shape)
        self.saved["w"] = weights
        return np.asarray((x * weights).sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (self.saved["w"] * grad.reshape(-1)[0],)


# ============================================================================
# DISTANCES AND LOSS HEADS
# ============================================================================

class PairwiseSqDist(Function):
    """M[i, j] = ‖E_i − E_j‖², exactly symmetric with a zero diagonal"""

    name = "pairwise_sq_dist"

    def forward(self, e: np.ndarray) -> np.ndarray:
        if e.ndim != 2:
            raise DimensionError("pairwise_sq_dist", e.shape, reason="expected B×D")
        diff = e[:, None, :] - e[None, :, :]
        self.saved["e"] = e
        return np.maximum((diff * diff).sum(axis=-1), 0)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        e = self.saved["e"]
        s = grad + grad.T
        return (2.0 * (s.sum(axis=1, keepdims=True) * e - s @ e),)


def _label_masks(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    not_self = ~np.eye(labels.size, dtype=bool)
    return same & not_self, ~same


class BatchAllTriplet(Function):
    """Mean hinge over every valid triplet whose hinge is positive"""

    name = "batch_all_triplet"

    def forward(self, m: np.ndarray, labels: Optional[np.ndarray] = None, margin: float = 0.2) -> np.ndarray:
        labels = np.asarray(labels)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or labels.shape != (m.shape[0],):
            raise DimensionError("batch_all_triplet", m.shape, labels.shape)
        pos, neg = _label_masks(labels)
        valid = pos[:, :, None] & neg[:, None, :]
        total = int(valid.sum())
        if total == 0:
            raise BatchCompositionError("batch-all needs two classes and a class with two samples")

        hinge = m[:, :, None] - m[:, None, :] + margin
        active = valid & (hinge > 0)
        n_active = int(active.sum())
        self.saved.update(active=active, n_active=n_active, total=total)
        if n_active == 0:
            return np.zeros((), dtype=m.dtype)
        return np.asarray(hinge[active].sum() / n_active, dtype=m.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        active, n_active = self.saved["active"], self.saved["n_active"]
        if n_active == 0:
            return (np.zeros(active.shape[:2], dtype=grad.dtype),)
        counts = active.sum(axis=2).astype(grad.dtype) - active.sum(axis=1).astype(grad.dtype)
        return (counts * (grad.reshape(-1)[0] / n_active),)


class BatchHardTriplet(Function):
    """Mean over anchors of the hinge between its hardest positive and hardest negative"""

    name = "batch_hard_triplet"

    def forward(self, m: np.ndarray, labels: Optional[np.ndarray] = None, margin: float = 0.2) -> np.ndarray:
        labels = np.asarray(labels)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or labels.shape != (m.shape[0],):
            raise DimensionError("batch_hard_triplet", m.shape, labels.shape)
        classes, counts = np.unique(labels, return_counts=True)
        if classes.size < 2:
            raise BatchCompositionError("batch-hard needs at least two classes")
        if counts.min() < 2:
            lonely = classes[counts < 2].tolist()
            raise BatchCompositionError(f"batch-hard needs two samples per class, classes {lonely} have one")

        pos, neg = _label_masks(labels)
        # argmax/argmin return the first extremum: ties go to the lowest index
        hardest_p = np.where(pos, m, -np.inf).argmax(axis=1)
        hardest_n = np.where(neg, m, np.inf).argmin(axis=1)
        rows = np.arange(m.shape[0])
        hinge = m[rows, hardest_p] - m[rows, hardest_n] + margin
        active = hinge > 0
        self.saved.update(p=hardest_p, n=hardest_n, active=active, size=m.shape[0])
        return np.asarray(np.where(active, hinge, 0).mean(), dtype=m.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        p, n, active, size = self.saved["p"], self.saved["n"], self.saved["active"], self.saved["size"]
        g = np.zeros((size, size), dtype=grad.dtype)
        scale = grad.reshape(-1)[0] / size
        rows = np.flatnonzero(active)
        np.add.at(g, (rows, p[rows]), scale)
        np.add.at(g, (rows, n[rows]), -scale)
        return (g,)


class CrossEntropy(Function):
    """Mean of −log softmax(logits)[label], max-subtracted"""

    name = "cross_entropy"

    def forward(self, logits: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError("cross_entropy", logits.shape, labels.shape)
        c = logits.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ContractError(f"cross_entropy labels must lie in [0, {c})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        rows = np.arange(logits.shape[0])
        self.saved.update(p=np.exp(log_p), labels=labels)
        return np.asarray(-log_p[rows, labels].mean(), dtype=logits.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        p, labels = self.saved["p"], self.saved["labels"]
        g = p.copy()
        g[np.arange(labels.size), labels] -= 1
        return (g * (grad.reshape(-1)[0] / labels.size),)


# ============================================================================
# FUNCTIONAL API
# ============================================================================

def dense_forward(x: Tensor, w: Tensor, b: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return Dense.apply(x, w, b, tape=tape)


def conv2d_forward(x: Tensor, k: Tensor, b: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return Conv2d.apply(x, k, b, tape=tape)


def relu_forward(x: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return Relu.apply(x, tape=tape)


def maxpool2_forward(x: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return MaxPool2.apply(x, tape=tape)


def l2_normalize(x: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return L2Normalize.apply(x, tape=tape)


def reshape(x: Tensor, shape: Sequence[int], tape: Optional[GradTape] = None) -> Tensor:
    return Reshape.apply(x, tape=tape, shape=tuple(shape))


def tensor_sum(x: Tensor, tape: Optional[GradTape] = None) -> Tensor:
    return Sum.apply(x, tape=tape)


def weighted_sum(x: Tensor, weights: np.ndarray, tape: Optional[GradTape] = None) -> Tensor:
    return WeightedSum.apply(x, tape=tape, weights=np.asarray(weights, dtype=x.data.dtype))
