"""RBF/linear SVM trained by SMO, one-against-all wrapping, CV reporting.

The binary solver minimises f(a) = a'Qa/2 - e'a over 0 <= a <= C,
y'a = 0 (Q_ij = y_i y_j K_ij), choosing the maximal KKT-violating pair
each step and stopping when the violation drops under the tolerance.
"""

from __future__ import annotations

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FitError, FormatError

log = logging.getLogger(__name__)

FULL_GRAM_LIMIT = 4096
_TAU = 1e-12


def kernel_function(kind: str, gamma: float):
    """Returns k(A, B) -> len(A) x len(B) kernel matrix."""
    if kind == "linear":
        return lambda a, b: np.atleast_2d(a) @ np.atleast_2d(b).T
    if kind == "rbf":
        def rbf(a, b):
            a, b = np.atleast_2d(a), np.atleast_2d(b)
            d2 = (
                np.einsum("nd,nd->n", a, a)[:, None]
                - 2.0 * (a @ b.T)
                + np.einsum("nd,nd->n", b, b)[None, :]
            )
            return np.exp(-gamma * np.maximum(d2, 0.0))
        return rbf
    raise ConfigError(f"unknown kernel {kind!r}")


class _KernelCache:
    """Full Gram below FULL_GRAM_LIMIT points, LRU row cache above."""

    def __init__(self, x, kfun, max_rows=1024):
        self.x = x
        self.kfun = kfun
        self.n = len(x)
        if self.n <= FULL_GRAM_LIMIT:
            self.full = kfun(x, x)
            self.rows = None
        else:
            self.full = None
            self.rows = OrderedDict()
            self.max_rows = max_rows

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        hit = self.rows.get(i)
        if hit is not None:
            self.rows.move_to_end(i)
            return hit
        row = self.kfun(self.x[i : i + 1], self.x)[0]
        self.rows[i] = row
        if len(self.rows) > self.max_rows:
            self.rows.popitem(last=False)
        return row

    def diag(self) -> np.ndarray:
        if self.full is not None:
            return np.diagonal(self.full).copy()
        return np.array([self.kfun(v[None, :], v[None, :])[0, 0] for v in self.x])


@dataclass
class BinaryModel:
    alpha: np.ndarray
    bias: float
    iterations: int
    kkt_violation: float


def svm_train_binary(
    x: np.ndarray, y: np.ndarray, c: float, kernel: str = "rbf",
    gamma: float = 1.0, tol: float = 1e-3, max_iter: int | None = None,
) -> BinaryModel:
    """SMO with maximal-violating-pair working set selection."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if x.shape[0] != n:
        raise ConsistencyError("X and y lengths differ")
    if not (np.all(np.abs(y) == 1.0) and len(np.unique(y)) == 2):
        raise ConfigError("labels must contain both +1 and -1")
    if c <= 0:
        raise ConfigError("C must be positive")
    cache = _KernelCache(x, kernel_function(kernel, gamma))
    diag = cache.diag()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    if max_iter is None:
        max_iter = max(100000, 100 * n)
    pos = y > 0
    it = 0
    viol = np.inf
    for it in range(1, max_iter + 1):
        vals = -y * grad
        up = (pos & (alpha < c)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < c)) | (pos & (alpha > 0))
        if not up.any() or not low.any():
            viol = 0.0
            break
        i = int(np.argmax(np.where(up, vals, -np.inf)))
        j = int(np.argmin(np.where(low, vals, np.inf)))
        viol = vals[i] - vals[j]
        if viol < tol:
            break
        ki, kj = cache.row(i), cache.row(j)
        quad = diag[i] + diag[j] - 2.0 * ki[j]
        if quad <= 0:
            quad = _TAU
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0 and nj < 0:
                ni, nj = diff, 0.0
            elif diff <= 0 and ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0 and ni > c:
                ni, nj = c, c - diff
            elif diff <= 0 and nj > c:
                ni, nj = c + diff, c
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > c:
                if ni > c:
                    ni, nj = c, total - c
                if nj > c:
                    ni, nj = total - c, c
            else:
                if nj < 0:
                    ni, nj = total, 0.0
                if ni < 0:
                    ni, nj = 0.0, total
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        grad += y * (y[i] * dai * ki + y[j] * daj * kj)
    else:
        raise FitError(f"SMO did not converge in {max_iter} iterations "
                       f"(violation {viol:.3g})")

    yg = y * grad
    upper = alpha >= c
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = yg[free].mean()
    else:
        ub = np.minimum.reduce(yg[(upper & ~pos) | (lower & pos)], initial=np.inf)
        lb = np.maximum.reduce(yg[(upper & pos) | (lower & ~pos)], initial=-np.inf)
        rho = (ub + lb) / 2.0
    return BinaryModel(alpha=alpha, bias=-float(rho), iterations=it,
                       kkt_violation=float(max(viol, 0.0)))


@dataclass(frozen=True)
class SvmModel:
    """One-against-all multi-class model: one binary machine per class."""

    classes: tuple[str, ...]
    kernel: str
    gamma: float
    c: float
    support: tuple[np.ndarray, ...]  # per class: SV feature matrix
    coef: tuple[np.ndarray, ...]  # per class: alpha_i * y_i at the SVs
    bias: tuple[float, ...]
    dim: int


def svm_train_multiclass(
    x: np.ndarray, labels, classes, c: float, kernel: str, gamma: float,
    tol: float = 1e-3,
) -> SvmModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    support, coef, bias = [], [], []
    for cls in classes:
        y = np.where(labels == cls, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            raise ConfigError(f"class {cls!r} has no counter-examples")
        model = svm_train_binary(x, y, c, kernel, gamma, tol)
        sv = model.alpha > 1e-12
        support.append(x[sv])
        coef.append(model.alpha[sv] * y[sv])
        bias.append(model.bias)
    return SvmModel(
        classes=tuple(classes), kernel=kernel, gamma=gamma, c=c,
        support=tuple(support), coef=tuple(coef), bias=tuple(bias),
        dim=x.shape[1],
    )


def predict(model: SvmModel, x: np.ndarray):
    """Returns (labels, decision values n x L); ties take the lowest index."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.dim:
        raise ConsistencyError(
            f"feature dim {x.shape[1]} does not match model dim {model.dim}"
        )
    kfun = kernel_function(model.kernel, model.gamma)
    decisions = np.empty((x.shape[0], len(model.classes)))
    for idx in range(len(model.classes)):
        if len(model.support[idx]):
            decisions[:, idx] = kfun(x, model.support[idx]) @ model.coef[idx]
        else:
            decisions[:, idx] = 0.0
        decisions[:, idx] += model.bias[idx]
    labels = [model.classes[i] for i in np.argmax(decisions, axis=1)]
    return labels, decisions


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are the true class, columns the predicted class."""

    counts: np.ndarray
    classes: tuple[str, ...]

    def add(self, true_label, pred_label) -> None:
        self.counts[self.classes.index(true_label), self.classes.index(pred_label)] += 1


def new_confusion(classes) -> ConfusionMatrix:
    n = len(classes)
    return ConfusionMatrix(counts=np.zeros((n, n), dtype=np.int64), classes=tuple(classes))


def confusion_accuracy(cm: ConfusionMatrix):
    """Returns (overall, per_class) accuracies; empty rows give nan."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ConfigError("empty confusion matrix")
    overall = float(np.trace(counts)) / float(total)
    rows = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diagonal(counts) / rows, np.nan)
    return overall, per_class


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    lines = ["true\\pred," + ",".join(cm.classes)]
    for idx, cls in enumerate(cm.classes):
        lines.append(cls + "," + ",".join(str(v) for v in cm.counts[idx]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_confusion_csv(path) -> ConfusionMatrix:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("true\\pred,"):
        raise FormatError(f"{path}: not a confusion matrix CSV")
    classes = tuple(lines[0].split(",")[1:])
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append([int(v) for v in parts[1:]])
    counts = np.asarray(rows, dtype=np.int64)
    if counts.shape != (len(classes), len(classes)):
        raise FormatError(f"{path}: matrix shape does not match class list")
    return ConfusionMatrix(counts=counts, classes=classes)


@dataclass(frozen=True)
class CvReport:
    folds: int
    repeats: int
    accuracies: tuple[float, ...]  # one per repeat
    mean_accuracy: float
    confusion: ConfusionMatrix
    feature_set: tuple[str, ...]
    config_hash: str
    seed: int


def grouped_stratified_folds(labels, items, n_folds: int, rng: np.random.Generator):
    """Split sample indices into folds by item id, stratified per class.

    Items of one garment never straddle folds; every class contributes
    items to every fold. Raises ConfigError naming the class when a class
    has fewer distinct items than folds.
    """
    labels = np.asarray(labels)
    items = np.asarray(items)
    fold_items: list[set] = [set() for _ in range(n_folds)]
    for cls in sorted(set(labels.tolist())):
        cls_items = sorted(set(items[labels == cls].tolist()))
        if len(cls_items) < n_folds:
            raise ConfigError(
                f"class {cls!r} has {len(cls_items)} items, needs >= {n_folds}"
            )
        order = rng.permutation(len(cls_items))
        for pos, idx in enumerate(order):
            fold_items[pos % n_folds].add(cls_items[idx])
    folds = []
    for f in range(n_folds):
        test = np.nonzero(np.isin(items, sorted(fold_items[f])))[0]
        train = np.nonzero(~np.isin(items, sorted(fold_items[f])))[0]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# model file (SVMM1)

_MAGIC = b"SVMM1"


def save_model(path, model: SvmModel, config_hash: str = "", seed: int = 0) -> None:
    blob = [_MAGIC]
    classes_enc = "\x1f".join(model.classes).encode()
    blob.append(
        struct.pack(
            "<16sq16sddII",
            config_hash.encode()[:16], seed, model.kernel.encode()[:16],
            model.gamma, model.c, model.dim, len(model.classes),
        )
    )
    blob.append(struct.pack("<I", len(classes_enc)))
    blob.append(classes_enc)
    for sv, coef, bias in zip(model.support, model.coef, model.bias):
        blob.append(struct.pack("<Id", len(sv), bias))
        blob.append(np.ascontiguousarray(sv, dtype="<f8").tobytes())
        blob.append(np.ascontiguousarray(coef, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blob))


def load_model(path):
    """Returns (SvmModel, config_hash, seed)."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise FormatError(f"{path}: bad magic, expected {_MAGIC!r}")
    off = len(_MAGIC)
    head = "<16sq16sddII"
    config_hash, seed, kernel, gamma, c, dim, n_cls = struct.unpack_from(head, data, off)
    off += struct.calcsize(head)
    (clen,) = struct.unpack_from("<I", data, off)
    off += 4
    classes = tuple(data[off : off + clen].decode().split("\x1f"))
    off += clen
    if len(classes) != n_cls:
        raise FormatError(f"{path}: class list length mismatch")
    support, coef, bias = [], [], []
    for _ in range(n_cls):
        n_sv, b = struct.unpack_from("<Id", data, off)
        off += struct.calcsize("<Id")
        sv = np.frombuffer(data, dtype="<f8", count=n_sv * dim, offset=off)
        off += 8 * n_sv * dim
        cf = np.frombuffer(data, dtype="<f8", count=n_sv, offset=off)
        off += 8 * n_sv
        support.append(sv.reshape(n_sv, dim).copy())
        coef.append(cf.copy())
        bias.append(float(b))
    model = SvmModel(
        classes=classes, kernel=kernel.rstrip(b"\x00").decode(), gamma=gamma,
        c=c, support=tuple(support), coef=tuple(coef), bias=tuple(bias), dim=dim,
    )
    return model, config_hash.rstrip(b"\x00").decode(), seed
