"""Shared-space correlation learning: regularized classical CCA, deep CCA
with analytic gradients, and the category-based re-pairing variant.

Both CCA and the deep objective run through the same whitened
cross-covariance: T = inv_sqrt(Sxx + rx I) . Sxy . inv_sqrt(Syy + ry I);
canonical correlations are the singular values of T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigurationError, DataFormatError, NumericalError
from .linalg import inv_sqrt_sym

_SIDES = ("x", "y")

# Ridge applied when fitting the CCA head on encoder outputs, relative to
# the mean per-feature variance of those outputs.  Sized so low-variance
# noise directions are damped rather than amplified by the whitening.
HEAD_RIDGE_REL = 8.0


@dataclass
class CcaModel:
    proj_x: np.ndarray        # (dx, k)
    proj_y: np.ndarray        # (dy, k)
    correlations: np.ndarray  # (k,) in [0, 1], nonincreasing
    mean_x: np.ndarray
    mean_y: np.ndarray
    rx: float = 0.0
    ry: float = 0.0

    @property
    def n_components(self) -> int:
        return self.proj_x.shape[1]

    def container_entries(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            prefix + "proj_x": self.proj_x,
            prefix + "proj_y": self.proj_y,
            prefix + "correlations": self.correlations.reshape(1, -1),
            prefix + "mean_x": self.mean_x.reshape(1, -1),
            prefix + "mean_y": self.mean_y.reshape(1, -1),
            prefix + "ridge": np.array([[self.rx, self.ry]]),
        }

    @classmethod
    def from_container_entries(cls, e: dict, prefix: str = "") -> "CcaModel":
        return cls(proj_x=e[prefix + "proj_x"],
                   proj_y=e[prefix + "proj_y"],
                   correlations=e[prefix + "correlations"].ravel(),
                   mean_x=e[prefix + "mean_x"].ravel(),
                   mean_y=e[prefix + "mean_y"].ravel(),
                   rx=float(e[prefix + "ridge"][0, 0]),
                   ry=float(e[prefix + "ridge"][0, 1]))

    def save(self, path: str | Path) -> None:
        fileio.write_container(path, self.container_entries())

    @classmethod
    def load(cls, path: str | Path) -> "CcaModel":
        return cls.from_container_entries(fileio.read_container(path))


def _whitened_cross(x: np.ndarray, y: np.ndarray, rx: float, ry: float):
    """Centered data, whitening roots and the whitened cross-covariance."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sxx = xc.T @ xc / (n - 1) + rx * np.eye(x.shape[1])
    syy = yc.T @ yc / (n - 1) + ry * np.eye(y.shape[1])
    sxy = xc.T @ yc / (n - 1)
    root_x = inv_sqrt_sym(sxx)
    root_y = inv_sqrt_sym(syy)
    return xc, yc, root_x, root_y, root_x @ sxy @ root_y


def cca_fit(x: np.ndarray, y: np.ndarray, k: int,
            rx: float = 0.0, ry: float = 0.0) -> CcaModel:
    """Classical CCA on paired rows via SVD of the whitened cross-covariance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise DataFormatError(f"paired inputs differ in rows: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    if n < 3:
        raise ConfigurationError(f"CCA needs at least 3 paired rows, got {n}")
    if not 1 <= k <= min(x.shape[1], y.shape[1], n - 1):
        raise ConfigurationError(
            f"k={k} out of range [1, {min(x.shape[1], y.shape[1], n - 1)}]"
        )
    _, _, root_x, root_y, t = _whitened_cross(x, y, rx, ry)
    u, s, vt = np.linalg.svd(t, full_matrices=False)
    return CcaModel(
        proj_x=root_x @ u[:, :k],
        proj_y=root_y @ vt[:k].T,
        correlations=np.clip(s[:k], 0.0, 1.0),
        mean_x=x.mean(axis=0),
        mean_y=y.mean(axis=0),
        rx=rx, ry=ry,
    )


def cca_project(model: CcaModel, data: np.ndarray, side: str) -> np.ndarray:
    """Project one modality into the shared space: (data - mean) @ proj."""
    if side not in _SIDES:
        raise ConfigurationError(f"side must be one of {_SIDES}, got {side!r}")
    mean = model.mean_x if side == "x" else model.mean_y
    proj = model.proj_x if side == "x" else model.proj_y
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != proj.shape[0]:
        raise DataFormatError(
            f"dimension mismatch: side {side!r} expects {proj.shape[0]} columns, "
            f"got {data.shape[1]}"
        )
    return (data - mean) @ proj


def dcca_loss_grad(h1: np.ndarray, h2: np.ndarray, k: int, r: float):
    """Negative sum of the top-k canonical correlations of a batch, with
    analytic gradients with respect to both batches.

    loss = -sum(top-k singular values of T), T the whitened cross-covariance
    of (h1, h2) with ridge r; gradients follow from the truncated SVD of T:
      d corr / d h1 = (2 h1c D11 + h2c D12^T) / (n-1)
    with D12 = R1 Uk Vk^T R2 and D11 = -1/2 R1 Uk diag(s) Uk^T R1.
    """
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape[0] != h2.shape[0]:
        raise DataFormatError(f"batch sizes differ: {h1.shape[0]} vs {h2.shape[0]}")
    n = h1.shape[0]
    if n < 3:
        raise ConfigurationError(f"batch too small for covariance: n={n}")
    if not 1 <= k <= min(h1.shape[1], h2.shape[1]):
        raise ConfigurationError(
            f"k={k} out of range [1, {min(h1.shape[1], h2.shape[1])}]"
        )
    h1c, h2c, r1, r2, t = _whitened_cross(h1, h2, r, r)
    u, s, vt = np.linalg.svd(t, full_matrices=False)
    uk, sk, vk = u[:, :k], s[:k], vt[:k].T
    loss = -float(sk.sum())
    d12 = r1 @ uk @ vk.T @ r2
    d11 = -0.5 * (r1 @ uk) @ (sk[:, None] * (r1 @ uk).T)
    d22 = -0.5 * (r2 @ vk) @ (sk[:, None] * (r2 @ vk).T)
    grad_h1 = -(2.0 * h1c @ d11 + h2c @ d12.T) / (n - 1)
    grad_h2 = -(2.0 * h2c @ d22 + h1c @ d12) / (n - 1)
    return loss, grad_h1, grad_h2


# ---------------------------------------------------------------------------
# per-modality encoders

@dataclass
class EncoderStack:
    """MLP with tanh hidden layers and an identity output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_full(np.asarray(x, dtype=np.float64))[-1]

    def forward_full(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations of every layer, input included (for backprop)."""
        acts = [x]
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if li == len(self.weights) - 1 else np.tanh(z))
        return acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of all weights/biases given d loss / d output."""
        grads_w, grads_b = [], []
        delta = grad_out
        for li in reversed(range(len(self.weights))):
            grads_w.append(acts[li].T @ delta)
            grads_b.append(delta.sum(axis=0))
            if li > 0:
                delta = (delta @ self.weights[li].T) * (1.0 - acts[li] ** 2)
        return grads_w[::-1], grads_b[::-1]


def init_encoder(sizes: tuple[int, ...], rng: np.random.Generator) -> EncoderStack:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return EncoderStack(weights=weights, biases=biases)


@dataclass(frozen=True)
class DccaConfig:
    hidden: tuple[int, ...] = (256, 128)
    out_dim: int = 40
    ridge: float = 1e-4
    epochs: int = 100
    learning_rate: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    category_pair_prob: float = 0.0  # 0 gives plain DCCA

    def __post_init__(self):
        if not 0.0 <= self.category_pair_prob <= 1.0:
            raise ConfigurationError("category_pair_prob must lie in [0, 1]")
        if self.out_dim < 1:
            raise ConfigurationError("out_dim must be >= 1")

    def to_json_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "out_dim", "ridge", "epochs", "learning_rate", "momentum",
            "seed", "category_pair_prob")}
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "DccaConfig":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (256, 128)))
        return cls(**d)


def expand_category_pairs(x: np.ndarray, y: np.ndarray, labels: np.ndarray,
                          p: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stochastically re-pair rows within categories.

    Each pair keeps its original y-side partner with probability 1-p;
    otherwise the partner is replaced by a uniformly drawn y row of the
    same category.  Output length equals input length.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"p must lie in [0, 1], got {p}")
    x = np.asarray(x)
    y = np.asarray(y)
    labels = np.asarray(labels, dtype=np.int64)
    if not len(x) == len(y) == len(labels):
        raise DataFormatError("x, y and labels must have equal lengths")
    if p == 0.0:
        return x, y
    rng = np.random.default_rng(seed)
    partner = np.arange(len(y))
    swap = rng.random(len(y)) < p
    for c in np.unique(labels):
        pool = np.flatnonzero(labels == c)
        rows = pool[swap[pool]]
        partner[rows] = pool[rng.integers(pool.size, size=rows.size)]
    return x, y[partner]


def dcca_fit(x: np.ndarray, y: np.ndarray, cfg: DccaConfig,
             labels: np.ndarray | None = None):
    """Train both encoders on the correlation objective, then fit a classical
    CCA head on their outputs (original pairing) as the final shared space.

    With cfg.category_pair_prob > 0 the batch is re-paired within categories
    every epoch before the loss, which stresses intra-class similarity.
    Full-batch gradient descent with momentum; deterministic per seed.

    Returns (encoder_x, encoder_y, head, loss_trace).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise DataFormatError(f"paired inputs differ in rows: {x.shape[0]} vs {y.shape[0]}")
    if cfg.category_pair_prob > 0 and labels is None:
        raise ConfigurationError("category_pair_prob > 0 requires labels")
    # Train on unit-RMS inputs so Glorot init lands in tanh's active range;
    # the scale folds back into the first layer afterwards, keeping the
    # returned encoders plain maps over raw features.
    sx = float(np.sqrt(x.var(axis=0).mean())) or 1.0
    sy = float(np.sqrt(y.var(axis=0).mean())) or 1.0
    x, y = x / sx, y / sy
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    enc_x = init_encoder((x.shape[1],) + cfg.hidden + (cfg.out_dim,), rng)
    enc_y = init_encoder((y.shape[1],) + cfg.hidden + (cfg.out_dim,), rng)
    vel_x = [np.zeros_like(w) for w in enc_x.weights + enc_x.biases]
    vel_y = [np.zeros_like(w) for w in enc_y.weights + enc_y.biases]
    trace = np.zeros(cfg.epochs)
    for epoch in range(cfg.epochs):
        if cfg.category_pair_prob > 0:
            epoch_seed = int(np.random.SeedSequence(
                [cfg.seed, 1, epoch]).generate_state(1, np.uint64)[0])
            xb, yb = expand_category_pairs(
                x, y, labels, cfg.category_pair_prob, seed=epoch_seed)
        else:
            xb, yb = x, y
        acts_x = enc_x.forward_full(xb)
        acts_y = enc_y.forward_full(yb)
        loss, g1, g2 = dcca_loss_grad(acts_x[-1], acts_y[-1],
                                      cfg.out_dim, cfg.ridge)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        trace[epoch] = loss
        gw_x, gb_x = enc_x.backward(acts_x, g1)
        gw_y, gb_y = enc_y.backward(acts_y, g2)
        for params, grads, vel in ((enc_x.weights + enc_x.biases, gw_x + gb_x, vel_x),
                                   (enc_y.weights + enc_y.biases, gw_y + gb_y, vel_y)):
            for p_arr, g_arr, v_arr in zip(params, grads, vel):
                v_arr *= cfg.momentum
                v_arr -= cfg.learning_rate * g_arr
                p_arr += v_arr
    enc_x.weights[0] /= sx
    enc_y.weights[0] /= sy
    hx, hy = enc_x.forward(x * sx), enc_y.forward(y * sy)
    # The head ridge scales with the encoder output variance so shrinkage
    # strength is architecture-independent (cfg.ridge only conditions the
    # whitening inside the training loss).
    head = cca_fit(hx, hy, k=cfg.out_dim,
                   rx=HEAD_RIDGE_REL * float(hx.var(axis=0).mean()),
                   ry=HEAD_RIDGE_REL * float(hy.var(axis=0).mean()))
    return enc_x, enc_y, head, trace


# ---------------------------------------------------------------------------
# uniform projection surface for CCA / DCCA / C-DCCA

@dataclass
class SharedSpace:
    """CCA head, optionally behind per-modality encoders."""

    head: CcaModel
    encoder_x: EncoderStack | None = None
    encoder_y: EncoderStack | None = None

    @property
    def n_components(self) -> int:
        return self.head.n_components

    def project(self, data: np.ndarray, side: str, k: int | None = None) -> np.ndarray:
        if side not in _SIDES:
            raise ConfigurationError(f"side must be one of {_SIDES}, got {side!r}")
        enc = self.encoder_x if side == "x" else self.encoder_y
        h = enc.forward(data) if enc is not None else np.asarray(data, dtype=np.float64)
        z = cca_project(self.head, h, side)
        if k is None:
            return z
        if not 1 <= k <= z.shape[1]:
            raise ConfigurationError(f"k={k} exceeds model dimension {z.shape[1]}")
        return z[:, :k]

    def save(self, path: str | Path) -> None:
        entries = self.head.container_entries("head_")
        for side, enc in (("x", self.encoder_x), ("y", self.encoder_y)):
            if enc is None:
                continue
            for li, (w, b) in enumerate(zip(enc.weights, enc.biases)):
                entries[f"enc{side}_w{li}"] = w
                entries[f"enc{side}_b{li}"] = b.reshape(1, -1)
        fileio.write_container(path, entries)

    @classmethod
    def load(cls, path: str | Path) -> "SharedSpace":
        e = fileio.read_container(path)
        head = CcaModel.from_container_entries(e, "head_")
        encoders = {}
        for side in _SIDES:
            weights, biases = [], []
            li = 0
            while f"enc{side}_w{li}" in e:
                weights.append(e[f"enc{side}_w{li}"])
                biases.append(e[f"enc{side}_b{li}"].ravel())
                li += 1
            encoders[side] = EncoderStack(weights, biases) if weights else None
        return cls(head=head, encoder_x=encoders["x"], encoder_y=encoders["y"])


def write_training_log(path: str | Path, trace: np.ndarray) -> None:
    Path(path).write_text(json.dumps(
        {"epochs": len(trace), "loss": [float(v) for v in trace]}, indent=2))
