"""Supervised heads: softmax regression, one-vs-rest kernel SVM (SMO), and
accuracy / confusion-matrix evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigurationError, DataFormatError, NumericalError


# ---------------------------------------------------------------------------
# softmax head

@dataclass(frozen=True)
class SoftmaxConfig:
    epochs: int = 200
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0


@dataclass
class SoftmaxModel:
    weights: np.ndarray  # (d, C)
    bias: np.ndarray     # (C,)
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1]) if len(self.loss_trace) else float("nan")

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.weights.shape[0]:
            raise DataFormatError(
                f"dimension mismatch: data has {x.shape[1]} columns, "
                f"model expects {self.weights.shape[0]}"
            )
        return _softmax(x @ self.weights + self.bias)

    def save(self, path: str | Path) -> None:
        fileio.write_container(path, {
            "weights": self.weights,
            "bias": self.bias.reshape(1, -1),
            "loss_trace": self.loss_trace.reshape(1, -1),
        })

    @classmethod
    def load(cls, path: str | Path) -> "SoftmaxModel":
        e = fileio.read_container(path)
        return cls(weights=e["weights"], bias=e["bias"].ravel(),
                   loss_trace=e["loss_trace"].ravel())


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_grad(weights, bias, x, y_onehot, l2):
    """Cross-entropy + L2 loss and its exact gradient (full batch)."""
    n = x.shape[0]
    p = _softmax(x @ weights + bias)
    ll = -np.log(np.maximum(p[y_onehot.astype(bool)], 1e-300)).mean()
    loss = ll + 0.5 * l2 * float((weights ** 2).sum())
    delta = (p - y_onehot) / n
    return loss, x.T @ delta + l2 * weights, delta.sum(axis=0)


def softmax_fit(x: np.ndarray, y: np.ndarray,
                cfg: SoftmaxConfig = SoftmaxConfig()) -> SoftmaxModel:
    """Full-batch gradient descent on cross-entropy with L2 decay.

    Weights start at zero, so the first recorded loss on C balanced
    categories is ln C.  Deterministic for a given config.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not np.isfinite(x).all():
        raise NumericalError("non-finite feature values")
    n_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_classes)
    if (counts == 0).any():
        raise ConfigurationError(f"empty class: {np.flatnonzero(counts == 0).tolist()}")
    if x.shape[0] < n_classes:
        raise ConfigurationError("fewer rows than classes")
    y_onehot = np.eye(n_classes)[y]
    weights = np.zeros((x.shape[1], n_classes))
    bias = np.zeros(n_classes)
    trace = np.zeros(cfg.epochs)
    for epoch in range(cfg.epochs):
        loss, gw, gb = softmax_loss_grad(weights, bias, x, y_onehot, cfg.l2)
        trace[epoch] = loss
        weights -= cfg.learning_rate * gw
        bias -= cfg.learning_rate * gb
    return SoftmaxModel(weights=weights, bias=bias, loss_trace=trace)


# ---------------------------------------------------------------------------
# kernel SVM trained with SMO

@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"          # "linear" or "rbf"
    gamma: float | None = None  # None resolves to 1/(d * mean feature variance)

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return a @ b.T
        if self.kind == "rbf":
            if self.gamma is None:
                raise ConfigurationError("rbf kernel needs a resolved gamma")
            sq = (np.einsum("ij,ij->i", a, a)[:, None]
                  + np.einsum("ij,ij->i", b, b)[None, :] - 2.0 * (a @ b.T))
            return np.exp(-self.gamma * np.maximum(sq, 0.0))
        raise ConfigurationError(f"unknown kernel {self.kind!r}")


@dataclass(frozen=True)
class SvmConfig:
    kernel: KernelSpec = KernelSpec()
    c_reg: float = 1.0
    tol: float = 1e-3
    max_passes: int = 4000  # cap on full sweeps; normal exit is a clean sweep
    seed: int = 0


@dataclass
class BinarySvm:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray        # (m,) alpha_i * y_i
    bias: float

    def decision(self, kernel: KernelSpec, x: np.ndarray) -> np.ndarray:
        return kernel.matrix(x, self.support_vectors) @ self.dual_coef + self.bias


@dataclass
class SvmModel:
    machines: list[BinarySvm]
    kernel: KernelSpec
    kkt_residuals: np.ndarray  # per-class max KKT violation at end of training

    @property
    def n_classes(self) -> int:
        return len(self.machines)

    @property
    def input_dim(self) -> int:
        return self.machines[0].support_vectors.shape[1]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise DataFormatError(
                f"dimension mismatch: data has {x.shape[1]} columns, "
                f"model expects {self.input_dim}"
            )
        return np.column_stack([m.decision(self.kernel, x) for m in self.machines])

    def save(self, path: str | Path) -> None:
        kind_code = {"linear": 0.0, "rbf": 1.0}[self.kernel.kind]
        entries = {
            "kernel": np.array([[kind_code, self.kernel.gamma or 0.0]]),
            "kkt_residuals": self.kkt_residuals.reshape(1, -1),
        }
        for c, m in enumerate(self.machines):
            entries[f"class{c}_sv"] = m.support_vectors
            entries[f"class{c}_coef"] = m.dual_coef.reshape(1, -1)
            entries[f"class{c}_bias"] = np.array([[m.bias]])
        fileio.write_container(path, entries)

    @classmethod
    def load(cls, path: str | Path) -> "SvmModel":
        e = fileio.read_container(path)
        kind_code, gamma = e["kernel"].ravel()
        kernel = KernelSpec(kind="linear" if kind_code == 0 else "rbf",
                            gamma=None if gamma == 0 else float(gamma))
        machines = []
        c = 0
        while f"class{c}_sv" in e:
            machines.append(BinarySvm(
                support_vectors=e[f"class{c}_sv"],
                dual_coef=e[f"class{c}_coef"].ravel(),
                bias=float(e[f"class{c}_bias"][0, 0]),
            ))
            c += 1
        return cls(machines=machines, kernel=kernel,
                   kkt_residuals=e["kkt_residuals"].ravel())


def resolve_gamma(kernel: KernelSpec, x: np.ndarray) -> KernelSpec:
    if kernel.kind == "rbf" and kernel.gamma is None:
        mean_var = float(x.var(axis=0).mean())
        gamma = 1.0 / (x.shape[1] * mean_var) if mean_var > 0 else 1.0
        return KernelSpec(kind="rbf", gamma=gamma)
    return kernel


def _smo_step(k, y, alpha, c_reg, i, j, errors, b):
    """One analytic two-multiplier update; returns the new bias or None."""
    if i == j:
        return None
    a_i, a_j = alpha[i], alpha[j]
    if y[i] != y[j]:
        lo, hi = max(0.0, a_j - a_i), min(c_reg, c_reg + a_j - a_i)
    else:
        lo, hi = max(0.0, a_i + a_j - c_reg), min(c_reg, a_i + a_j)
    if lo >= hi:
        return None
    eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
    if eta <= 0:
        return None  # duplicate rows or kernel roundoff; pair cannot progress
    a_j_new = a_j + y[j] * (errors[i] - errors[j]) / eta
    a_j_new = min(hi, max(lo, a_j_new))
    if abs(a_j_new - a_j) < 1e-12 * (a_j_new + a_j + 1e-12):
        return None
    a_i_new = a_i + y[i] * y[j] * (a_j - a_j_new)
    # The i-side update is not clipped, so roundoff can leave a multiplier
    # a few ulp off a box bound; such a point would masquerade as a free
    # support vector and corrupt the bias interval.  Snap to the bounds.
    snap = 1e-10 * c_reg
    if a_i_new < snap:
        a_i_new = 0.0
    elif a_i_new > c_reg - snap:
        a_i_new = c_reg
    if a_j_new < snap:
        a_j_new = 0.0
    elif a_j_new > c_reg - snap:
        a_j_new = c_reg
    d_i, d_j = a_i_new - a_i, a_j_new - a_j
    b1 = b - errors[i] - y[i] * d_i * k[i, i] - y[j] * d_j * k[i, j]
    b2 = b - errors[j] - y[i] * d_i * k[i, j] - y[j] * d_j * k[j, j]
    if 0 < a_i_new < c_reg:
        b_new = b1
    elif 0 < a_j_new < c_reg:
        b_new = b2
    else:
        b_new = 0.5 * (b1 + b2)
    alpha[i], alpha[j] = a_i_new, a_j_new
    errors += y[i] * d_i * k[i] + y[j] * d_j * k[j] + (b_new - b)
    return b_new


_RANDOM_TRIES = 8   # second-choice draws per violator before moving on
_REFRESH_EVERY = 64  # sweeps between exact error-cache recomputations


def _violates(r: float, a: float, c_reg: float, tol: float) -> bool:
    return (r < -tol and a < c_reg) or (r > tol and a > 0)


def _fresh_errors(k, y, alpha, b):
    return (alpha * y) @ k + b - y


def _find_violators(errors, y, alpha, c_reg, tol):
    margins = y * errors
    return np.flatnonzero(((margins < -tol) & (alpha < c_reg))
                          | ((margins > tol) & (alpha > 0)))


def _optimal_bias(f: np.ndarray, y: np.ndarray, alpha: np.ndarray,
                  c_reg: float, b: float) -> float:
    """Bias minimizing the worst KKT violation for fixed alpha.

    The in-loop bias rule (b1/b2 averaging) can land anywhere in the
    admissible interval when the last updated pair ends at the box bounds,
    leaving boundary points with spurious violations as wide as the
    interval.  The midpoint of the interval [max of lower bounds, min of
    upper bounds] is the minimax choice; when the interval is nonempty it
    satisfies every condition exactly.
    """
    u = y - f
    free = (alpha > 0) & (alpha < c_reg)
    lower = free | ((alpha <= 0) & (y > 0)) | ((alpha >= c_reg) & (y < 0))
    upper = free | ((alpha <= 0) & (y < 0)) | ((alpha >= c_reg) & (y > 0))
    if not lower.any() or not upper.any():
        return b
    return float(0.5 * (u[lower].max() + u[upper].min()))


def smo_solve(k: np.ndarray, y: np.ndarray, c_reg: float, tol: float,
              max_passes: int, rng: np.random.Generator):
    """Solve the binary SVM dual on a precomputed kernel matrix.

    Sweep strategy: scan KKT violators in index order; for each, draw
    random partners until one pair makes progress (a bounded number of
    draws, since another violator's update may unstick this one later).
    The error cache updates incrementally (exact up to f64 rounding) and
    is recomputed from alpha periodically; termination requires a fresh
    cache, with the bias refined to its minimax value, that shows no
    violator, i.e. every point satisfies KKT within tol.  If no random
    pair progresses, an exhaustive partner scan distinguishes a
    pairwise-optimal state (done after refining the bias) from bad luck.
    """
    n = len(y)
    alpha = np.zeros(n)
    b = 0.0
    errors = _fresh_errors(k, y, alpha, b)
    for sweep in range(max_passes):
        if sweep % _REFRESH_EVERY == _REFRESH_EVERY - 1:
            errors = _fresh_errors(k, y, alpha, b)
        violators = _find_violators(errors, y, alpha, c_reg, tol)
        if violators.size == 0:
            f = (alpha * y) @ k
            b = _optimal_bias(f, y, alpha, c_reg, b)
            errors = f + b - y  # confirm on a fresh cache, minimax bias
            if _find_violators(errors, y, alpha, c_reg, tol).size == 0:
                return alpha, b
            continue
        changed = 0
        for i in violators:
            if not _violates(y[i] * errors[i], alpha[i], c_reg, tol):
                continue  # fixed as a side effect of an earlier pair
            for _ in range(_RANDOM_TRIES):
                b_new = _smo_step(k, y, alpha, c_reg, i, int(rng.integers(n)),
                                  errors, b)
                if b_new is not None:
                    b = b_new
                    changed += 1
                    break
        if changed == 0:
            errors = _fresh_errors(k, y, alpha, b)
            for i in _find_violators(errors, y, alpha, c_reg, tol):
                for j in range(n):
                    b_new = _smo_step(k, y, alpha, c_reg, i, j, errors, b)
                    if b_new is not None:
                        b = b_new
                        changed += 1
                        break
                if changed:
                    break
            if changed == 0:
                # No pair can progress, so alpha is pairwise (hence dual)
                # optimal; only the bias can still be improved.
                f = (alpha * y) @ k
                return alpha, _optimal_bias(f, y, alpha, c_reg, b)
    raise NumericalError(f"SMO did not converge within {max_passes} sweeps")


def kkt_residual(k: np.ndarray, y: np.ndarray, alpha: np.ndarray, b: float,
                 c_reg: float) -> float:
    """Max KKT violation over all training points (0 when optimal)."""
    margins = y * ((alpha * y) @ k + b)
    res = np.zeros_like(margins)
    free = (alpha > 0) & (alpha < c_reg)
    res[alpha <= 0] = np.maximum(0.0, 1.0 - margins[alpha <= 0])
    res[free] = np.abs(1.0 - margins[free])
    res[alpha >= c_reg] = np.maximum(0.0, margins[alpha >= c_reg] - 1.0)
    return float(res.max())


def svm_fit(x: np.ndarray, y: np.ndarray,
            cfg: SvmConfig = SvmConfig()) -> SvmModel:
    """One-vs-rest SVM trained by SMO on a shared kernel matrix."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(y.max()) + 1
    present = np.unique(y)
    if present.size < 2:
        raise ConfigurationError("SVM needs at least 2 categories present")
    counts = np.bincount(y, minlength=n_classes)
    if (counts == 0).any():
        raise ConfigurationError(f"empty class: {np.flatnonzero(counts == 0).tolist()}")
    kernel = resolve_gamma(cfg.kernel, x)
    k = kernel.matrix(x, x)
    machines = []
    residuals = np.zeros(n_classes)
    for c in range(n_classes):
        y_bin = np.where(y == c, 1.0, -1.0)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, c]))
        alpha, b = smo_solve(k, y_bin, cfg.c_reg, cfg.tol, cfg.max_passes, rng)
        residuals[c] = kkt_residual(k, y_bin, alpha, b, cfg.c_reg)
        keep = alpha > 1e-12
        machines.append(BinarySvm(
            support_vectors=x[keep].copy(),
            dual_coef=(alpha * y_bin)[keep],
            bias=float(b),
        ))
    return SvmModel(machines=machines, kernel=kernel, kkt_residuals=residuals)


# ---------------------------------------------------------------------------
# prediction and evaluation

def predict(model: SoftmaxModel | SvmModel, x: np.ndarray) -> np.ndarray:
    """Argmax class; ties resolve to the lowest category index."""
    if isinstance(model, SoftmaxModel):
        scores = model.predict_proba(x)
    elif isinstance(model, SvmModel):
        scores = model.decision_function(x)
    else:
        raise ConfigurationError(f"cannot predict with {type(model).__name__}")
    return scores.argmax(axis=1)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) ints, rows = true, cols = predicted
    categories: tuple[str, ...] | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.categories)

    def to_csv(self, path: str | Path) -> None:
        names = self.categories or tuple(
            f"category{i}" for i in range(self.counts.shape[0]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in self.counts:
                w.writerow([int(v) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ConfusionMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        names = tuple(rows[0])
        counts = np.array([[int(v) for v in row] for row in rows[1:]], dtype=np.int64)
        if counts.shape != (len(names), len(names)):
            raise DataFormatError(f"confusion CSV at {path} is not square")
        return cls(counts=counts, categories=names)


def evaluate(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int,
             categories: tuple[str, ...] | None = None):
    """Accuracy (= trace/total) and the exact confusion-count matrix."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataFormatError(
            f"length mismatch: {y_true.shape} labels vs {y_pred.shape} predictions"
        )
    if y_true.size == 0:
        raise ConfigurationError("cannot evaluate zero records")
    for arr, what in ((y_true, "labels"), (y_pred, "predictions")):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ConfigurationError(f"{what} outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    cm = ConfusionMatrix(counts=counts, categories=categories)
    return cm.accuracy, cm
