"""Construct-validity harness.

A multinomial logit predicts categorical group membership from position
estimates.  Fitting is Newton ascent on the log-likelihood with
step-halving, a ridge fallback for singular Hessians, and coefficient
clamping so perfectly separated data still yields finite fit statistics.
Model quality is summarized by count R^2 (share of correct argmax
predictions), McFadden's pseudo R^2 (1 - lnL / lnL_null), and
BIC = -2 lnL + k ln n, with the conventional evidence bins for BIC
differences.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


class ConstructError(ValueError):
    """Invalid design matrix or model usage."""


COEF_CLAMP = 30.0  # |coefficient| bound keeping separated fits finite


@dataclass(frozen=True)
class DesignMatrix:
    """Predictors, integer class labels, and their names.

    Rows with missing predictors are dropped before construction
    (listwise deletion); `dropped_rows` records how many.
    """

    predictors: np.ndarray  # (n, m) float
    labels: np.ndarray  # (n,) int in [0, n_classes)
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self):
        predictors = np.asarray(self.predictors, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "predictors", predictors)
        object.__setattr__(self, "labels", labels)
        if predictors.ndim != 2 or labels.ndim != 1 or predictors.shape[0] != labels.size:
            raise ConstructError("predictors must be (n, m) with one label per row")
        if labels.size == 0:
            raise ConstructError("empty design matrix")
        if not np.isfinite(predictors).all():
            raise ConstructError("predictors contain non-finite values")
        if len(self.class_names) < 2:
            raise ConstructError("need at least two classes")
        if labels.min() < 0 or labels.max() >= len(self.class_names):
            raise ConstructError("labels out of range for the declared classes")
        if np.unique(labels).size < 2:
            raise ConstructError("at least two classes must be present in the data")

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_features(self) -> int:
        return self.predictors.shape[1]


def intercept_only(data: DesignMatrix) -> DesignMatrix:
    """The same rows with every predictor removed (null-model design)."""
    return DesignMatrix(
        predictors=np.empty((data.n, 0)),
        labels=data.labels,
        class_names=data.class_names,
        feature_names=(),
        dropped_rows=data.dropped_rows,
    )


def load_design_csv(path: str | Path, features: list[str] | None = None) -> DesignMatrix:
    """Read `party_id,class_label,feature...` rows with listwise deletion."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "class_label" not in header:
            raise ConstructError(f"{path}: missing class_label column")
        if features is None:
            features = [c for c in header if c not in ("party_id", "class_label")]
        missing = [f for f in features if f not in header]
        if missing:
            raise ConstructError(f"{path}: missing feature columns: {', '.join(missing)}")
        for row in reader:
            rows.append((row["class_label"], [row[f] for f in features]))
    kept_labels, kept_rows, dropped = [], [], 0
    for label, values in rows:
        try:
            parsed = [float(v) for v in values]
        except (TypeError, ValueError):
            dropped += 1
            continue
        if not all(math.isfinite(v) for v in parsed):
            dropped += 1
            continue
        kept_labels.append(label)
        kept_rows.append(parsed)
    if not kept_rows:
        raise ConstructError(f"{path}: no complete rows")
    class_names = tuple(sorted(set(kept_labels)))
    index = {c: i for i, c in enumerate(class_names)}
    return DesignMatrix(
        predictors=np.array(kept_rows, dtype=float),
        labels=np.array([index[c] for c in kept_labels]),
        class_names=class_names,
        feature_names=tuple(features),
        dropped_rows=dropped,
    )


@dataclass(frozen=True)
class ModelFit:
    """Fitted multinomial logit (first class is the reference class).

    coefficients has shape (n_classes - 1, n_features + 1) with the
    intercept in column 0; k counts all free coefficients.
    """

    coefficients: np.ndarray
    log_likelihood: float
    n: int
    k: int
    converged: bool
    iterations: int
    separated: bool
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    history: tuple[float, ...] = ()


def _design(predictors: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((predictors.shape[0], 1)), predictors])


def loglik_and_gradient(coefficients, predictors, labels, n_classes):
    """Log-likelihood and its gradient w.r.t. the free coefficients.

    `coefficients` is (n_classes - 1, n_features + 1); the reference
    class has all-zero scores.
    """
    X = _design(np.asarray(predictors, dtype=float))
    B = np.asarray(coefficients, dtype=float)
    eta = np.hstack([np.zeros((X.shape[0], 1)), X @ B.T])  # (n, J)
    lse = logsumexp(eta, axis=1)
    ll = float(eta[np.arange(X.shape[0]), labels].sum() - lse.sum())
    P = np.exp(eta - lse[:, None])
    Y = np.zeros_like(P)
    Y[np.arange(X.shape[0]), labels] = 1.0
    grad = (Y[:, 1:] - P[:, 1:]).T @ X  # (J-1, m+1)
    return ll, grad


def _class_probabilities(coefficients, predictors):
    X = _design(np.asarray(predictors, dtype=float))
    eta = np.hstack([np.zeros((X.shape[0], 1)), X @ np.asarray(coefficients).T])
    lse = logsumexp(eta, axis=1)
    return np.exp(eta - lse[:, None])


def _hessian(coefficients, predictors):
    """Negative-definite Hessian of the log-likelihood, in block form."""
    X = _design(np.asarray(predictors, dtype=float))
    P = _class_probabilities(coefficients, predictors)
    j_free = P.shape[1] - 1
    p = X.shape[1]
    H = np.zeros((j_free * p, j_free * p))
    for j in range(j_free):
        for k in range(j, j_free):
            w = P[:, j + 1] * ((1.0 if j == k else 0.0) - P[:, k + 1])
            block = -(X * w[:, None]).T @ X
            H[j * p:(j + 1) * p, k * p:(k + 1) * p] = block
            if k != j:
                H[k * p:(k + 1) * p, j * p:(j + 1) * p] = block.T
    return H


def fit_multinomial(
    data: DesignMatrix,
    tolerance: float = 1e-8,
    max_iterations: int = 100,
) -> ModelFit:
    """Maximum-likelihood fit by Newton ascent with step-halving.

    Convergence means the gradient max-norm fell below `tolerance`.
    Coefficients are clamped at +/-COEF_CLAMP; a fit that ends on the
    clamp boundary is flagged as separated and reported unconverged.
    A singular Hessian falls back to a ridge-damped step with a warning.
    """
    j_free = data.n_classes - 1
    p = data.n_features + 1
    k = j_free * p
    if data.n <= k:
        warnings.warn(
            f"n = {data.n} rows for k = {k} free coefficients; fit may be unstable",
            stacklevel=2,
        )
    B = np.zeros((j_free, p))
    ll, grad = loglik_and_gradient(B, data.predictors, data.labels, data.n_classes)
    history = [ll]
    converged = False
    warned_singular = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        if np.abs(grad).max() < tolerance:
            converged = True
            iterations -= 1
            break
        H = _hessian(B, data.predictors)
        g = grad.reshape(-1)
        try:
            step = np.linalg.solve(-H, g)
            if not np.isfinite(step).all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            ridge = 1e-8 * max(1.0, float(np.trace(-H)) / H.shape[0])
            if not warned_singular:
                warnings.warn("singular Hessian; taking ridge-damped steps", stacklevel=2)
                warned_singular = True
            step = np.linalg.solve(-H + ridge * np.eye(H.shape[0]), g)
        step = step.reshape(j_free, p)
        scale = 1.0
        accepted = False
        while scale >= 2.0**-20:
            candidate = np.clip(B + scale * step, -COEF_CLAMP, COEF_CLAMP)
            ll_new, grad_new = loglik_and_gradient(candidate, data.predictors, data.labels, data.n_classes)
            if ll_new >= ll - 1e-12:
                accepted = True
                break
            scale /= 2.0
        if not accepted:
            break
        if np.array_equal(candidate, B):
            break  # pinned against the clamp; no further progress
        B, ll, grad = candidate, ll_new, grad_new
        history.append(ll)
    else:
        iterations = max_iterations
    if not converged and np.abs(grad).max() < tolerance:
        converged = True
    # Separation pushes the MLE to infinity; the symptom is either a
    # coefficient pinned at the clamp or a prediction at numerical
    # certainty (the likelihood boundary).
    pinned = bool((np.abs(B) >= COEF_CLAMP - 1e-9).any())
    saturated = bool(
        data.n_features > 0
        and _class_probabilities(B, data.predictors).max() >= 1.0 - 1e-8
    )
    separated = pinned or saturated
    return ModelFit(
        coefficients=B,
        log_likelihood=ll,
        n=data.n,
        k=k,
        converged=converged,
        iterations=iterations,
        separated=separated,
        class_names=data.class_names,
        feature_names=data.feature_names,
        history=tuple(history),
    )


def predict(model: ModelFit, predictors) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and argmax labels (ties to the lowest index)."""
    predictors = np.asarray(predictors, dtype=float)
    if predictors.ndim != 2 or predictors.shape[1] != len(model.feature_names):
        raise ConstructError(
            f"expected {len(model.feature_names)} feature column(s), got shape {predictors.shape}"
        )
    probs = _class_probabilities(model.coefficients, predictors)
    return probs, probs.argmax(axis=1)


def count_r2(model: ModelFit, data: DesignMatrix) -> float:
    """Share of rows whose predicted class matches the label."""
    _, labels = predict(model, data.predictors)
    return float((labels == data.labels).mean())


def mcfadden_r2(model: ModelFit, null: ModelFit) -> float:
    """1 - lnL(model) / lnL(null) against the intercept-only fit."""
    if null.log_likelihood == 0:
        raise ConstructError("null model log-likelihood is zero; pseudo R^2 undefined")
    if model.n != null.n:
        raise ConstructError("model and null were fit on different row counts")
    return 1.0 - model.log_likelihood / null.log_likelihood


def bic(model: ModelFit) -> float:
    return -2.0 * model.log_likelihood + model.k * math.log(model.n)


def bic_evidence(delta: float) -> str:
    """Evidence category for an absolute BIC difference."""
    d = abs(delta)
    if d <= 2:
        return "weak"
    if d <= 6:
        return "positive"
    if d <= 10:
        return "strong"
    return "very strong"


@dataclass(frozen=True)
class ModelComparison:
    model_a: str
    model_b: str
    bic_a: float
    bic_b: float
    delta_bic: float  # bic_a - bic_b
    evidence: str  # category for |delta|, favouring the lower-BIC model


def compare_models(fits: list[ModelFit], labels: list[str]) -> list[ModelComparison]:
    """Pairwise BIC differences with evidence categories.

    All fits must come from identical row sets (equal n), otherwise the
    BICs are not comparable.
    """
    if len(fits) != len(labels):
        raise ConstructError("one label per fit, please")
    if len(fits) < 2:
        raise ConstructError("need at least two fits to compare")
    ns = {f.n for f in fits}
    if len(ns) != 1:
        raise ConstructError(f"fits cover different row counts {sorted(ns)}; not comparable")
    rows = []
    for i, (fa, la) in enumerate(zip(fits, labels)):
        for fb, lb in list(zip(fits, labels))[i + 1:]:
            ba, bb = bic(fa), bic(fb)
            delta = ba - bb
            rows.append(ModelComparison(la, lb, ba, bb, delta, bic_evidence(delta)))
    return rows


FIT_STATS_COLUMNS = ("model", "n", "k", "loglik", "count_r2", "mcfadden_r2", "bic")


def write_fit_stats_csv(rows: list[dict], path: str | Path) -> None:
    """Write `model,n,k,loglik,count_r2,mcfadden_r2,bic` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIT_STATS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in FIT_STATS_COLUMNS})


def write_coefficients_csv(model: ModelFit, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "term", "coefficient"])
        terms = ["intercept", *model.feature_names]
        for j, cls in enumerate(model.class_names[1:]):
            for t, term in enumerate(terms):
                writer.writerow([cls, term, format(model.coefficients[j, t], ".6g")])
