"""Dataset ingestion (libsvm text format), synthetic generators, splits and
column scaling."""
import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .criteria import CvSpec, HoldoutSplit
from .datafit import SparseDesign


class Task(str, Enum):
    REGRESSION = "regression"
    BINARY = "binary"
    MULTICLASS = "multiclass"


class ParseError(ValueError):
    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        super().__init__(msg if lineno is None else f"line {lineno}: {msg}")


@dataclass
class Dataset:
    X: SparseDesign
    y: np.ndarray
    task: Task = Task.REGRESSION
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = SparseDesign.from_any(self.X)
        self.y = np.asarray(self.y, dtype=float)
        self.task = Task(self.task)
        if self.y.shape != (self.X.n,):
            raise ValueError("X and y disagree on the number of samples")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("targets contain NaN or Inf")
        if self.task is Task.BINARY and not np.all(np.isin(self.y, (-1, 1))):
            raise ValueError("binary labels must be in {-1, +1}")
        if self.task is Task.MULTICLASS:
            if np.any(self.y != np.round(self.y)) or np.any(self.y < 1):
                raise ValueError("multiclass labels must be integers >= 1")

    @property
    def n_classes(self):
        if self.task is Task.MULTICLASS:
            return int(self.y.max())
        return 2 if self.task is Task.BINARY else None

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.X.take_rows(rows), self.y[rows], self.task,
                       dict(self.provenance, rows="subset"))


def parse_libsvm(stream, expected_task="regression", n_features=None,
                 keep_zeros=False):
    """Read ``label idx:val ...`` lines (1-based, strictly increasing indices).

    Parameters
    ----------
    stream : str or text file object
        A ``str`` is parsed as libsvm text; see ``load_libsvm`` for paths.
    expected_task : {"regression", "binary", "multiclass"}
    n_features : int, optional
        Width override; must be at least the largest index seen.
    keep_zeros : bool
        Store explicit zeros instead of dropping them.
    """
    task = Task(expected_task)
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, data, indices, indptr = [], [], [], [0]
    max_idx = 0
    for lineno, line in enumerate(stream, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"bad token {tok!r}", lineno) from None
            if not sep:
                raise ParseError(f"bad token {tok!r}", lineno)
            if idx <= prev:
                raise ParseError(
                    f"indices must be >= 1 and strictly increasing ({idx})",
                    lineno)
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {val_s!r}", lineno)
            prev = idx
            if val != 0 or keep_zeros:
                data.append(val)
                indices.append(idx - 1)
        max_idx = max(max_idx, prev)
        indptr.append(len(data))
    if not labels:
        raise ParseError("empty libsvm input")
    p = max_idx
    if n_features is not None:
        if n_features < max_idx:
            raise ParseError(f"feature index {max_idx} exceeds n_features="
                             f"{n_features}")
        p = n_features
    X = sp.csr_matrix((np.array(data, dtype=float),
                       np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)),
                      shape=(len(labels), p))
    y = np.array(labels)
    if task is Task.BINARY:
        classes = set(np.unique(y))
        if classes <= {0., 1.}:
            y = 2 * y - 1
        elif not classes <= {-1., 1.}:
            raise ParseError(f"binary task got labels {sorted(classes)}")
    return Dataset(SparseDesign(X), y, task,
                   {"source": "libsvm", "n_features": p})


def load_libsvm(path, expected_task="regression", n_features=None):
    with open(path) as fh:
        ds = parse_libsvm(fh, expected_task, n_features)
    ds.provenance["path"] = str(path)
    return ds


def dump_libsvm(dataset, stream=None):
    """Serialize to libsvm text; returns the text when ``stream`` is None."""
    out = io.StringIO() if stream is None else stream
    X = dataset.X.csr
    for i in range(X.shape[0]):
        sl = slice(X.indptr[i], X.indptr[i + 1])
        feats = " ".join(f"{j + 1}:{float(v)!r}"
                         for j, v in zip(X.indices[sl], X.data[sl]))
        label = float(dataset.y[i])
        label = repr(int(label)) if label.is_integer() else repr(label)
        out.write(f"{label} {feats}".rstrip() + "\n")
    if stream is None:
        return out.getvalue()


def _sparse_gaussian(rng, n, p, density):
    mask = rng.random((n, p)) < density
    vals = rng.standard_normal((n, p))
    return sp.csc_matrix(np.where(mask, vals, 0.))


def make_synthetic_regression(n, p, density=1., snr=10., seed=0):
    """Sparse Gaussian design with a planted ``ceil(0.1 p)``-sparse signal.

    ``snr = ||X beta*|| / ||noise||`` in expectation; ``snr=inf`` gives
    noiseless targets.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    X = _sparse_gaussian(rng, n, p, density)
    k = math.ceil(0.1 * p)
    beta_star = np.zeros(p)
    support = np.sort(rng.choice(p, size=k, replace=False))
    beta_star[support] = rng.choice([-1., 1.], size=k) * \
        (1. + rng.random(k))
    signal = X @ beta_star
    noise = rng.standard_normal(n)
    if np.isinf(snr):
        y = signal
    else:
        sigma = np.linalg.norm(signal) / (snr * np.sqrt(n))
        y = signal + sigma * noise
    prov = {"source": "synthetic", "n": n, "p": p, "density": density,
            "snr": snr, "seed": seed, "beta_star": beta_star}
    return Dataset(X, y, Task.REGRESSION, prov)


def make_synthetic_classification(n, p, density=1., snr=10., seed=0,
                                  n_classes=2):
    """Labels from a planted sparse linear model: signs for the binary case,
    argmax of ``n_classes`` noisy scores (labels ``1..q``) otherwise."""
    rng = np.random.default_rng(seed)
    X = _sparse_gaussian(rng, n, p, density)
    k = math.ceil(0.1 * p)
    B = np.zeros((p, n_classes))
    for c in range(n_classes):
        B[rng.choice(p, size=k, replace=False), c] = rng.standard_normal(k)
    scores = X @ B
    scale = np.linalg.norm(scores) / (snr * np.sqrt(scores.size))
    scores = scores + scale * rng.standard_normal(scores.shape)
    prov = {"source": "synthetic", "n": n, "p": p, "density": density,
            "snr": snr, "seed": seed, "n_classes": n_classes}
    if n_classes == 2:
        y = np.where(scores[:, 0] - scores[:, 1] >= 0, 1., -1.)
        return Dataset(X, y, Task.BINARY, prov)
    y = scores.argmax(axis=1) + 1.
    return Dataset(X, y, Task.MULTICLASS, prov)


def holdout_split(dataset, val_frac=0.5, seed=0):
    """Random train/validation split of the rows."""
    if not 0 < val_frac < 1:
        raise ValueError("val_frac must be in (0, 1)")
    n = dataset.X.n
    n_val = int(round(val_frac * n))
    if not 0 < n_val < n:
        raise ValueError(f"val_frac={val_frac} leaves an empty part for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return _split(dataset, train_idx, val_idx)


def kfold_split(dataset, K=5, seed=0):
    """K disjoint validation folds covering all rows; fold sizes differ by at
    most one."""
    n = dataset.X.n
    if K > n:
        raise ValueError(f"K={K} exceeds the number of samples n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for val_idx in np.array_split(perm, K):
        val_idx = np.sort(val_idx)
        train_idx = np.setdiff1d(np.arange(n), val_idx)
        folds.append(_split(dataset, train_idx, val_idx))
    return CvSpec(folds)


def _split(dataset, train_idx, val_idx):
    csr = dataset.X.csr
    return HoldoutSplit(SparseDesign(csr[train_idx]), dataset.y[train_idx],
                        SparseDesign(csr[val_idx]), dataset.y[val_idx],
                        train_idx=train_idx, val_idx=val_idx)


def standardize(dataset):
    """Scale every nonzero column to unit Euclidean norm (no centering, so
    sparsity is preserved).  Zero columns are left as is and listed in the
    provenance."""
    X = dataset.X.csc
    norms = np.sqrt(dataset.X.col_sqnorms)
    zero = norms == 0
    scale = np.where(zero, 1., norms)
    Xs = X @ sp.diags(1. / scale)
    prov = dict(dataset.provenance, scaling=scale,
                zero_columns=np.flatnonzero(zero))
    return Dataset(SparseDesign(Xs), dataset.y.copy(), dataset.task, prov)
