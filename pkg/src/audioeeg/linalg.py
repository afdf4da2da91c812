"""Dense linear-algebra kernel: symmetric inverse square root and PCA.

Conventions used throughout the package:
  * sample covariance uses divisor n-1;
  * eigenvalues below 1e-12 of the largest are floored before inversion;
  * eigenvector signs are fixed so the largest-magnitude entry is positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigurationError, DataFormatError, NumericalError

EIG_CLAMP = 1e-12


def _check_symmetric(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DataFormatError(f"expected a square matrix, got shape {s.shape}")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > 1e-11 * scale:
        raise DataFormatError("matrix is not symmetric")
    return 0.5 * (s + s.T)


def inv_sqrt_sym(s: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Symmetric R with R.(S + eps*I).R = I.

    Tiny eigenvalues are floored at EIG_CLAMP times the largest; genuinely
    indefinite input raises NumericalError.
    """
    s = _check_symmetric(s)
    if eps < 0:
        raise ConfigurationError(f"ridge eps must be >= 0, got {eps}")
    w, v = np.linalg.eigh(s)
    w = w + eps
    w_max = w.max()
    if w_max <= 0 or w.min() < -1e-8 * w_max:
        raise NumericalError("matrix is not positive definite after ridge")
    w = np.maximum(w, EIG_CLAMP * w_max)
    r = (v / np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def sample_cov(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Cross-covariance of centered columns, divisor n-1."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    yc = xc if y is None else np.asarray(y, dtype=np.float64) - np.asarray(y).mean(axis=0)
    return xc.T @ yc / (x.shape[0] - 1)


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is positive."""
    idx = np.abs(components).argmax(axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


@dataclass
class PcaModel:
    """Linear projection onto the leading principal axes."""

    mean: np.ndarray        # (d,)
    components: np.ndarray  # (d, k), orthonormal columns
    variances: np.ndarray   # (k,), nonincreasing

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def save(self, path: str | Path) -> None:
        fileio.write_container(path, {
            "mean": self.mean.reshape(1, -1),
            "components": self.components,
            "variances": self.variances.reshape(1, -1),
        })

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        entries = fileio.read_container(path)
        try:
            return cls(mean=entries["mean"].ravel(),
                       components=entries["components"],
                       variances=entries["variances"].ravel())
        except KeyError as exc:
            raise DataFormatError(f"container misses PCA entry {exc}") from exc


def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    """Top-k principal axes of the sample covariance.

    Tall inputs (n > d) go through an eigendecomposition of the d x d
    covariance, which is much cheaper than an SVD of the data matrix;
    wide inputs keep the SVD route.  Both yield the same model.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ConfigurationError(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= k <= min(n - 1, d):
        raise ConfigurationError(
            f"k={k} out of range [1, {min(n - 1, d)}] for shape {x.shape}"
        )
    mean = x.mean(axis=0)
    if n > d:
        w, v = np.linalg.eigh(sample_cov(x))
        variances = np.maximum(w[::-1], 0.0)
        components = fix_signs(v[:, ::-1][:, :k])
    else:
        _, svals, vt = np.linalg.svd(x - mean, full_matrices=False)
        variances = svals ** 2 / (n - 1)
        components = fix_signs(vt[:k].T)
    # Row-major copy: transforms must be bitwise identical whether the model
    # is fresh or reloaded, and BLAS kernels differ by memory layout.
    return PcaModel(mean=mean, components=np.ascontiguousarray(components),
                    variances=variances[:k])


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise DataFormatError(
            f"dimension mismatch: data has {x.shape[1]} columns, "
            f"model expects {model.input_dim}"
        )
    return (x - model.mean) @ model.components
