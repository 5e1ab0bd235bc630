"""Virtual-neuron features and the ridge-regression readout."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .fieldsim import FieldRecord

GAMMA_GRID = tuple(10.0 ** e for e in range(-8, 3))


class ReadoutError(ValueError):
    pass


class IllConditionedError(ReadoutError):
    def __init__(self, rank: int, n_cols: int):
        self.rank = rank
        self.n_cols = n_cols
        super().__init__(
            f"X^T X is singular with gamma = 0: rank {rank} < {n_cols} columns; use gamma > 0"
        )


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are symbol steps; column 0 is the bias when ``has_bias``.

    ``labels`` lists ``(i, k, l)`` per column (probe, sub-sample, wavelength);
    the bias is labelled ``("bias",)``. ``rows`` gives the symbol index of each row.
    """

    X: np.ndarray
    labels: tuple[tuple, ...]
    rows: np.ndarray
    has_bias: bool = True

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.labels):
            raise ReadoutError("labels do not match the column count")
        if self.X.shape[0] != self.rows.size:
            raise ReadoutError("row index does not match the row count")
        if not np.all(np.isfinite(self.X)):
            raise ReadoutError("feature matrix contains non-finite entries")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]

    def take(self, sel) -> "FeatureMatrix":
        return FeatureMatrix(self.X[sel], self.labels, self.rows[sel], self.has_bias)

    @classmethod
    def from_array(cls, X: np.ndarray, rows: np.ndarray | None = None, bias: bool = True) -> "FeatureMatrix":
        X = np.asarray(X, dtype=float)
        labels = tuple((j,) for j in range(X.shape[1]))
        if bias:
            X = np.column_stack([np.ones(X.shape[0]), X])
            labels = (("bias",),) + labels
        rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
        return cls(X, labels, rows, bias)

    def to_csv(self, path: str | Path) -> None:
        header = ["row"] + ["_".join(str(p) for p in lab) for lab in self.labels]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for r, row in zip(self.rows, self.X):
                fh.write(str(int(r)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def assemble_features(record: FieldRecord, samples_per_symbol: int = 4,
                      alignment_steps: int | None = None, wavelengths: int | None = None,
                      first_row: int | None = None) -> FeatureMatrix:
    """Row n holds I_i^l(t_a + n tau + k tau/K) for all probes i, sub-samples k, wavelengths l.

    ``t_a`` (``alignment_steps`` simulation steps) is when the fastest mode delivers
    symbol n. Rows start after the record's warm-up unless ``first_row`` is given.
    """
    steps = int(round(record.symbol_period_ns / record.sim_timestep_ns))
    if steps % samples_per_symbol:
        raise ReadoutError(
            f"K = {samples_per_symbol} sub-samples do not fit the {steps}-step symbol grid"
        )
    stride = steps // samples_per_symbol
    align = record.alignment_steps if alignment_steps is None else int(alignment_steps)
    if align < 0:
        raise ReadoutError("alignment must be non-negative")
    n_l = record.n_wavelengths if wavelengths is None else int(wavelengths)
    start = record.warmup_symbols if first_row is None else int(first_row)
    n_steps = record.intensities.shape[-1]
    last = (n_steps - 1 - align - (samples_per_symbol - 1) * stride) // steps
    n_sym = min(record.n_symbols - 1, last)
    if n_sym < start:
        raise ReadoutError("alignment leaves no complete symbol inside the record")
    rows = np.arange(start, n_sym + 1)
    idx = align + rows[:, None] * steps + np.arange(samples_per_symbol)[None, :] * stride
    inten = record.intensities[:n_l]  # (L, N, T)
    block = inten[:, :, idx]  # (L, N, rows, K)
    n_p = inten.shape[1]
    X = block.transpose(2, 0, 1, 3).reshape(rows.size, n_l * n_p * samples_per_symbol)
    labels = tuple((i, k, l) for l in range(n_l) for i in range(n_p) for k in range(samples_per_symbol))
    X = np.column_stack([np.ones(rows.size), X])
    return FeatureMatrix(X, (("bias",),) + labels, rows, True)


@dataclass(eq=False)
class ReadoutModel:
    weights: np.ndarray
    labels: tuple[tuple, ...]
    gamma: float
    standardized: bool = False
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "column_labels": [list(lab) for lab in self.labels],
            "weights": self.weights.tolist(),
            "normalization": None if not self.standardized else {
                "mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "config_hash": self.metadata.get("config_hash"),
            "metadata": {k: v for k, v in self.metadata.items() if k != "config_hash"},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ReadoutModel":
        norm = doc.get("normalization")
        meta = dict(doc.get("metadata") or {})
        meta["config_hash"] = doc.get("config_hash")
        return cls(weights=np.asarray(doc["weights"], dtype=float),
                   labels=tuple(tuple(lab) for lab in doc["column_labels"]),
                   gamma=float(doc["gamma"]), standardized=norm is not None,
                   mean=None if norm is None else np.asarray(norm["mean"]),
                   scale=None if norm is None else np.asarray(norm["scale"]), metadata=meta)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")


def _column_stats(X: np.ndarray, has_bias: bool) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    if has_bias:
        mean[0], scale[0] = 0.0, 1.0
    return mean, scale


def _solve_normal(Z: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    gram = Z.T @ Z
    rhs = Z.T @ y
    if gamma > 0:
        gram[np.diag_indices_from(gram)] += gamma
    try:
        c = cho_factor(gram, lower=True, check_finite=False)
    except LinAlgError:
        if gamma == 0:
            raise IllConditionedError(int(np.linalg.matrix_rank(Z)), Z.shape[1]) from None
        raise ReadoutError("regularized Gram matrix is not positive definite") from None
    if gamma == 0 and np.linalg.cond(gram) > 1e15:
        raise IllConditionedError(int(np.linalg.matrix_rank(Z)), Z.shape[1])
    return cho_solve(c, rhs, check_finite=False)


def train_ridge(X: FeatureMatrix | np.ndarray, y_tag, gamma: float | None = None,
                standardize: bool | None = None, validation_fraction: float = 0.2,
                gamma_grid: Sequence[float] = GAMMA_GRID) -> ReadoutModel:
    """Minimize ||y - Xw||^2 + gamma ||w||^2 via a Cholesky solve of the normal equations.

    With ``standardize`` (default: whenever a bias column exists) non-bias columns are
    scaled to zero mean and unit variance first, so ``gamma`` penalizes the standardized
    weights; the returned weights act on raw features. ``gamma=None`` picks gamma from
    ``gamma_grid`` times the mean Gram diagonal on the last ``validation_fraction`` of rows.
    """
    fm = X if isinstance(X, FeatureMatrix) else FeatureMatrix.from_array(X, bias=False)
    y = np.asarray(y_tag, dtype=float).ravel()
    if y.size != fm.n_rows:
        raise ReadoutError(f"{fm.n_rows} feature rows but {y.size} targets")
    standardize = fm.has_bias if standardize is None else standardize
    if standardize:
        mean, scale = _column_stats(fm.X, fm.has_bias)
        Z = (fm.X - mean) / scale
    else:
        mean = scale = None
        Z = fm.X
    meta: dict = {}
    if gamma is None:
        gamma, scores = select_gamma(Z, y, validation_fraction, gamma_grid)
        meta["gamma_search"] = scores
    if gamma < 0:
        raise ReadoutError("gamma must be non-negative")
    wz = _solve_normal(Z, y, float(gamma))
    if standardize:
        w = wz / scale
        if fm.has_bias:
            w[0] = wz[0] - np.sum(wz[1:] * mean[1:] / scale[1:])
    else:
        w = wz
    return ReadoutModel(weights=w, labels=fm.labels, gamma=float(gamma), standardized=standardize,
                        mean=mean, scale=scale, metadata=meta)


def select_gamma(Z: np.ndarray, y: np.ndarray, validation_fraction: float = 0.2,
                 gamma_grid: Sequence[float] = GAMMA_GRID) -> tuple[float, list]:
    """Grid search on a chronological hold-out: the last rows validate."""
    n_val = max(1, int(round(validation_fraction * y.size)))
    Zt, yt, Zv, yv = Z[:-n_val], y[:-n_val], Z[-n_val:], y[-n_val:]
    spectral = float(np.mean(np.sum(Zt**2, axis=0)))
    best, scores = None, []
    for g in gamma_grid:
        gamma = g * spectral
        try:
            w = _solve_normal(Zt, yt, gamma)
        except ReadoutError:
            continue
        err = float(np.mean((Zv @ w - yv) ** 2))
        scores.append([gamma, err])
        if best is None or err < best[1]:
            best = (gamma, err)
    if best is None:
        raise ReadoutError("no gamma on the grid gave a solvable system")
    return best[0], scores


def predict(model: ReadoutModel, X: FeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        if tuple(X.labels) != tuple(model.labels):
            raise ReadoutError("feature columns do not match the model's column labels")
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.weights.size:
        raise ReadoutError(f"expected {model.weights.size} columns, got {X.shape[1]}")
    return X @ model.weights


def lag_features(u: np.ndarray, rows: np.ndarray, lags: int = 3) -> FeatureMatrix:
    """Bias plus u(n), u(n-1), ..., u(n-lags+1) for each row index n."""
    rows = np.asarray(rows)
    if rows.min() < lags - 1:
        raise ReadoutError("rows reach before the start of the sequence")
    X = np.column_stack([u[rows - j] for j in range(lags)])
    return FeatureMatrix.from_array(X, rows=rows, bias=True)
