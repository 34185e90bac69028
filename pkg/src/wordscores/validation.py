"""Criterion-validity toolkit.

Estimates from scaling runs and external datasets meet in an
EstimateTable keyed by (party, country, dimension).  Columns are unit
rescaled (whole-dimension or per-country), then compared with the
concordance correlation coefficient

    rho_c = 2 * cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)

which factors as Pearson's r times a bias-correction factor C_b in (0, 1].
Confidence intervals use the Fisher z transform of rho_c with Lin's
asymptotic variance, or a seeded percentile bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm


class ValidationError(ValueError):
    """Undefined statistic or malformed estimate table."""


class RescaleError(ValidationError):
    """A rescaling group has no spread, so unit rescaling is undefined."""


class MergeError(ValidationError):
    """Key conflicts while assembling the estimate table."""


def _pairwise_complete(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("inputs must be 1-d arrays of equal length")
    mask = np.isfinite(x) & np.isfinite(y)
    return x[mask], y[mask]


def pearson(x, y) -> float:
    """Product-moment correlation on pairwise-complete observations."""
    x, y = _pairwise_complete(x, y)
    n = x.size
    if n < 3:
        raise ValidationError(f"need at least 3 complete pairs, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValidationError("correlation undefined: zero variance")
    return float(dx @ dy / (sx * sy))


@dataclass(frozen=True)
class ConcordanceResult:
    """Concordance correlation between two measures of the same quantity.

    rho_c = pearson_r * c_b; c_b penalizes location and scale bias and is
    1 exactly when the two measures share mean and SD.
    """

    rho_c: float
    pearson_r: float
    c_b: float
    n: int
    ci_low: float
    ci_high: float
    mean_x: float
    mean_y: float
    sd_x: float
    sd_y: float


def _lin_z_variance(rho_c: float, pearson_r: float, u2: float, n: int) -> float:
    """Asymptotic variance of atanh(rho_c); u2 is the squared scaled
    location shift (mean_x - mean_y)^2 / (sd_x * sd_y)."""
    r2 = pearson_r**2
    c2 = rho_c**2
    one_minus = 1.0 - c2
    if r2 == 0 or one_minus <= 0:
        raise ValidationError("asymptotic CI undefined for |rho_c| = 1 or r = 0")
    term1 = (1.0 - r2) * c2 / (one_minus * r2)
    term2 = 2.0 * rho_c**3 * (1.0 - rho_c) * u2 / (pearson_r * one_minus**2)
    term3 = rho_c**4 * u2**2 / (2.0 * r2 * one_minus**2)
    return (term1 + term2 - term3) / (n - 2)


def ccc_ci(result: ConcordanceResult, level: float = 0.95) -> tuple[float, float]:
    """z-transformed confidence interval for rho_c at the given level.

    With an exactly zero correlation the asymptotic variance is undefined
    (it divides by r^2); the plain Fisher variance 1/(n-3) stands in.
    """
    if not 0 <= level < 1:
        raise ValidationError(f"confidence level must be in [0, 1), got {level}")
    if abs(result.rho_c) >= 1:
        return result.rho_c, result.rho_c
    if result.pearson_r == 0:
        if result.n <= 3:
            return result.rho_c, result.rho_c
        variance = 1.0 / (result.n - 3)
    else:
        u2 = (result.mean_x - result.mean_y) ** 2 / (result.sd_x * result.sd_y)
        variance = _lin_z_variance(result.rho_c, result.pearson_r, u2, result.n)
    z = math.atanh(result.rho_c)
    half = norm.ppf(0.5 + level / 2.0) * math.sqrt(variance)
    return float(math.tanh(z - half)), float(math.tanh(z + half))


def bootstrap_ccc_ci(x, y, level: float = 0.95, resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for rho_c (seeded, resampling pairs)."""
    x, y = _pairwise_complete(x, y)
    if x.size < 3:
        raise ValidationError("bootstrap CI needs at least 3 complete pairs")
    rng = np.random.default_rng(seed)
    stats = []
    n = x.size
    while len(stats) < resamples:
        idx = rng.integers(0, n, size=n)
        bx, by = x[idx], y[idx]
        vx, vy = bx.var(), by.var()
        if vx == 0 and vy == 0:
            continue  # degenerate resample carries no information
        stats.append(2.0 * np.cov(bx, by, bias=True)[0, 1] / (vx + vy + (bx.mean() - by.mean()) ** 2))
    alpha = 1.0 - level
    lo, hi = np.quantile(np.array(stats), [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def ccc(x, y, ci_level: float = 0.95, ci_method: str = "asymptotic",
        resamples: int = 1000, seed: int = 0) -> ConcordanceResult:
    """Concordance correlation with population moments and a CI.

    ci_method "asymptotic" uses the z-transformed Lin variance;
    "bootstrap" uses a seeded percentile bootstrap.
    """
    x, y = _pairwise_complete(x, y)
    n = x.size
    if n < 3:
        raise ValidationError(f"need at least 3 complete pairs, got {n}")
    mean_x, mean_y = float(x.mean()), float(y.mean())
    var_x = float(x.var())
    var_y = float(y.var())
    if var_x == 0 or var_y == 0:
        raise ValidationError("concordance undefined: zero variance")
    sd_x, sd_y = math.sqrt(var_x), math.sqrt(var_y)
    cov = float(((x - mean_x) * (y - mean_y)).mean())
    denominator = var_x + var_y + (mean_x - mean_y) ** 2
    rho_c = 2.0 * cov / denominator
    pearson_r = cov / (sd_x * sd_y)
    if pearson_r != 0:
        c_b = rho_c / pearson_r
    else:
        c_b = 2.0 * sd_x * sd_y / denominator
    c_b = min(c_b, 1.0)
    result = ConcordanceResult(
        rho_c=float(rho_c), pearson_r=float(pearson_r), c_b=float(c_b), n=n,
        ci_low=float(rho_c), ci_high=float(rho_c),
        mean_x=mean_x, mean_y=mean_y, sd_x=sd_x, sd_y=sd_y,
    )
    if abs(rho_c) >= 1:
        return result
    if ci_method == "asymptotic":
        lo, hi = ccc_ci(result, ci_level)
    elif ci_method == "bootstrap":
        lo, hi = bootstrap_ccc_ci(x, y, ci_level, resamples, seed)
    else:
        raise ValidationError(f"unknown ci_method {ci_method!r}")
    return replace(result, ci_low=lo, ci_high=hi)


# --------------------------------------------------------------------------
# Estimate tables
# --------------------------------------------------------------------------

KEY_COLUMNS = ("party_id", "country", "dimension")

RESCALE_MODES = ("wd", "pc")  # whole dimension / per country


@dataclass
class EstimateTable:
    """Party-by-source table of position estimates.

    `frame` holds the key columns plus one column per source; `scales`
    maps a source column to a declared (min, max) or "empirical".
    """

    frame: pd.DataFrame
    scales: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in KEY_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValidationError(f"estimate table missing key columns: {', '.join(missing)}")
        keys = self.frame[list(KEY_COLUMNS)]
        if keys.duplicated().any():
            dupes = keys[keys.duplicated()].iloc[0].tolist()
            raise ValidationError(f"duplicate estimate-table key {tuple(dupes)}")
        for column in self.source_columns():
            self.scales.setdefault(column, "empirical")

    def source_columns(self) -> list[str]:
        return [c for c in self.frame.columns if c not in KEY_COLUMNS]


def rescale_unit(table: EstimateTable, column: str, mode: str) -> pd.Series:
    """Map a source column onto [0, 1] via (value - min) / (max - min).

    Declared-scale columns use their declared bounds; empirical columns
    take min/max over the whole dimension (mode "wd") or within each
    (dimension, country) group (mode "pc").
    """
    if mode not in RESCALE_MODES:
        raise ValidationError(f"unknown rescale mode {mode!r}; use 'wd' or 'pc'")
    if column not in table.frame.columns or column in KEY_COLUMNS:
        raise ValidationError(f"no source column {column!r} in estimate table")
    values = pd.to_numeric(table.frame[column], errors="coerce")
    scale = table.scales.get(column, "empirical")
    if scale != "empirical":
        lo, hi = float(scale[0]), float(scale[1])
        if hi <= lo:
            raise ValidationError(f"declared scale for {column!r} has max <= min")
        return (values - lo) / (hi - lo)
    group_cols = ["dimension"] if mode == "wd" else ["dimension", "country"]
    out = pd.Series(np.nan, index=values.index, dtype=float)
    for key, idx in table.frame.groupby(group_cols, sort=False).groups.items():
        group = values.loc[idx].dropna()
        if group.empty:
            continue
        lo, hi = group.min(), group.max()
        if hi == lo:
            raise RescaleError(f"column {column!r} is constant within group {key}; cannot rescale")
        out.loc[idx] = (values.loc[idx] - lo) / (hi - lo)
    return out


@dataclass(frozen=True)
class PairConcordance:
    """One CCC comparison inside a benchmark report."""

    kind: str  # "candidate" or "benchmark"
    x: str
    y: str
    result: ConcordanceResult
    passes: bool | None = None  # candidate pairs only


@dataclass(frozen=True)
class BenchmarkReport:
    pairs: list[PairConcordance]
    thresholds: dict[tuple[str, str], float]  # benchmark pair -> rho_c
    criterion_valid: bool


def benchmark_matrix(
    table: EstimateTable,
    candidate: str,
    benchmarks: list[str],
    mode: str,
    dimension: str | None = None,
    ci_level: float = 0.95,
) -> BenchmarkReport:
    """Candidate-vs-benchmark and benchmark-vs-benchmark concordances.

    A candidate pair passes when its CCC upper confidence bound strictly
    exceeds every benchmark-pair CCC point estimate; the candidate is
    criterion-valid when at least one of its pairs passes.
    """
    if len(benchmarks) < 2:
        raise ValidationError("need at least two benchmark columns")
    frame = table.frame
    if dimension is not None:
        frame = frame[frame["dimension"] == dimension]
        if frame.empty:
            raise ValidationError(f"no rows for dimension {dimension!r}")
        table = EstimateTable(frame.reset_index(drop=True), dict(table.scales))
    else:
        present = frame["dimension"].unique()
        if len(present) > 1:
            raise ValidationError(
                "table covers several dimensions (" + ", ".join(sorted(present))
                + "); pass one explicitly rather than pooling them"
            )
    rescaled = {c: rescale_unit(table, c, mode) for c in [candidate, *benchmarks]}

    thresholds = {}
    pairs: list[PairConcordance] = []
    for i, b1 in enumerate(benchmarks):
        for b2 in benchmarks[i + 1:]:
            result = ccc(rescaled[b1], rescaled[b2], ci_level=ci_level)
            thresholds[(b1, b2)] = result.rho_c
            pairs.append(PairConcordance("benchmark", b1, b2, result))
    cutoff = max(thresholds.values())
    valid = False
    for b in benchmarks:
        result = ccc(rescaled[candidate], rescaled[b], ci_level=ci_level)
        passes = bool(result.ci_high > cutoff)
        valid = valid or passes
        pairs.append(PairConcordance("candidate", candidate, b, result, passes))
    return BenchmarkReport(pairs, thresholds, valid)


@dataclass(frozen=True)
class MergeResult:
    table: EstimateTable
    n_rows: int
    unmatched_doc_ids: tuple[str, ...]  # run documents absent from the crosswalk


def merge_estimates(
    runs: dict[str, pd.DataFrame],
    external: pd.DataFrame | None,
    key_map: pd.DataFrame,
) -> MergeResult:
    """Assemble the party-level estimate table.

    `runs` maps a source name to an estimates frame (doc_id, dimension,
    raw, transformed); the crosswalk `key_map` (doc_id, party_id, country)
    lifts document ids to parties.  `external` rows follow
    party_id,country,dimension,source,score and become one column per
    source value.  Cells stay missing where a source has no value.
    """
    for col in ("doc_id", "party_id", "country"):
        if col not in key_map.columns:
            raise MergeError(f"crosswalk missing column {col!r}")
    counts = key_map.groupby("doc_id").size()
    ambiguous = counts[counts > 1]
    if not ambiguous.empty:
        raise MergeError(f"ambiguous crosswalk rows for doc_id(s): {', '.join(ambiguous.index)}")
    mapping = key_map.set_index("doc_id")

    pieces = []
    unmatched: set[str] = set()
    for name, est in runs.items():
        required = {"doc_id", "dimension"}
        if not required.issubset(est.columns):
            raise MergeError(f"run {name!r}: estimates need doc_id and dimension columns")
        est = est.copy()
        value = est["transformed"].where(est["transformed"].notna(), est["raw"]) \
            if "transformed" in est.columns else est["raw"]
        est["value"] = pd.to_numeric(value, errors="coerce")
        known = est["doc_id"].isin(mapping.index)
        unmatched.update(est.loc[~known, "doc_id"])
        est = est[known].copy()
        est["party_id"] = mapping.loc[est["doc_id"], "party_id"].to_numpy()
        est["country"] = mapping.loc[est["doc_id"], "country"].to_numpy()
        keyed = est[["party_id", "country", "dimension", "value"]]
        if keyed.duplicated(subset=["party_id", "country", "dimension"]).any():
            raise MergeError(f"run {name!r} has duplicate (party, dimension) estimates")
        pieces.append(keyed.rename(columns={"value": name}).set_index(list(KEY_COLUMNS)))

    if external is not None and len(external):
        required = {"party_id", "country", "dimension", "source", "score"}
        if not required.issubset(external.columns):
            raise MergeError("external data needs party_id,country,dimension,source,score columns")
        for source, chunk in external.groupby("source", sort=True):
            if str(source) in KEY_COLUMNS:
                raise MergeError(f"external source name {source!r} clashes with a key column")
            keyed = chunk[["party_id", "country", "dimension", "score"]]
            if keyed.duplicated(subset=list(KEY_COLUMNS)).any():
                raise MergeError(f"external source {source!r} has duplicate keys")
            keyed = keyed.rename(columns={"score": str(source)})
            keyed[str(source)] = pd.to_numeric(keyed[str(source)], errors="coerce")
            pieces.append(keyed.set_index(list(KEY_COLUMNS)))

    if not pieces:
        raise MergeError("nothing to merge")
    names = [c for piece in pieces for c in piece.columns]
    if len(names) != len(set(names)):
        raise MergeError("duplicate source column names across runs/external data")
    frame = pd.concat(pieces, axis=1, join="outer").reset_index()
    frame = frame.sort_values(list(KEY_COLUMNS), kind="stable").reset_index(drop=True)
    table = EstimateTable(frame)
    return MergeResult(table, len(frame), tuple(sorted(unmatched)))


def read_external_csv(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"party_id": str, "country": str, "dimension": str, "source": str})
    required = {"party_id", "country", "dimension", "source", "score"}
    missing = required - set(frame.columns)
    if missing:
        raise ValidationError(f"{path}: missing columns {', '.join(sorted(missing))}")
    return frame


REPORT_COLUMNS = (
    "reference", "benchmark", "transformation", "rescale",
    "rho_c", "n", "ci_low", "ci_high", "pearson_r", "c_b",
)


def report_row(result: ConcordanceResult) -> dict[str, str]:
    """Numeric cells of one report row.

    rho_c and pearson_r round to 6 significant digits; c_b is written as
    their exact quotient (12 digits) so the product identity survives the
    CSV round trip.
    """
    rho_c = float(format(result.rho_c, ".6g"))
    pearson_r = float(format(result.pearson_r, ".6g"))
    c_b = rho_c / pearson_r if pearson_r != 0 else result.c_b
    return {
        "rho_c": format(rho_c, ".6g"),
        "n": str(result.n),
        "ci_low": format(result.ci_low, ".6g"),
        "ci_high": format(result.ci_high, ".6g"),
        "pearson_r": format(pearson_r, ".6g"),
        "c_b": format(c_b, ".12g"),
    }
