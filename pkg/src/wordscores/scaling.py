"""The wordscores engine.

A reference set (term-document matrix plus exogenous document scores per
dimension) turns into per-word probabilities and word scores; virgin
documents are scored as frequency-weighted word-score averages under two
normalizations of the virgin word frequencies:

* ``total``   - weights relative to all tokens of the virgin document
* ``cooccur`` - weights relative to the virgin tokens that carry a word score

Raw virgin scores sit on a shrunken scale, so two affine transformations
map them back to the reference metric: LBG (match the reference-score SD
while preserving the virgin mean) and MV (anchor two reference documents
so their assigned scores are recovered exactly).
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import validation
from .corpus import Document, TermDocumentMatrix

Z_95 = 1.96  # normal quantile used for the raw-score confidence band


class ScalingError(ValueError):
    """Invalid scoring input (missing scores, empty tables, ...)."""


class UnscorableDocumentError(ScalingError):
    """A virgin document shares no vocabulary with the word-score table."""

    def __init__(self, doc_ids):
        self.doc_ids = list(doc_ids)
        super().__init__(
            "no scorable words in document(s): " + ", ".join(self.doc_ids)
        )


class TransformError(ScalingError):
    """A score transformation cannot be applied (degenerate inputs)."""


VARIANT_TOTAL = "total"
VARIANT_COOCCUR = "cooccur"
_VARIANT_ALIASES = {
    "total": VARIANT_TOTAL,
    "total-words": VARIANT_TOTAL,
    "cooccur": VARIANT_COOCCUR,
    "co-occurring": VARIANT_COOCCUR,
    "cooccurring": VARIANT_COOCCUR,
}


def normalize_variant(variant: str) -> str:
    try:
        return _VARIANT_ALIASES[variant.lower()]
    except KeyError:
        raise ScalingError(f"unknown scoring variant {variant!r}; use 'total' or 'cooccur'")


@dataclass(frozen=True)
class ReferenceSet:
    """Reference matrix plus exogenous scores per document and dimension."""

    matrix: TermDocumentMatrix
    scores: dict[str, dict[str, float]]  # doc id -> {dimension: score}

    def __post_init__(self):
        if self.matrix.n_docs < 2:
            raise ScalingError("a reference set needs at least two documents")

    def assigned(self, dimension: str) -> np.ndarray:
        """Scores on one dimension, aligned with the matrix document order.

        Degenerate all-equal scores are allowed here (the word-score
        formula stays well defined); scoring runs reject them upstream.
        """
        values = []
        for doc_id in self.matrix.doc_ids:
            per_doc = self.scores.get(doc_id, {})
            if dimension not in per_doc:
                raise ScalingError(
                    f"reference document {doc_id!r} has no score on dimension {dimension!r}"
                )
            values.append(float(per_doc[dimension]))
        return np.array(values, dtype=float)

    def has_dimension(self, dimension: str) -> bool:
        return all(dimension in self.scores.get(d, {}) for d in self.matrix.doc_ids)


@dataclass(frozen=True)
class WordProbabilityTable:
    """P(word seen in reference document r | word), one row per word."""

    vocabulary: tuple[str, ...]
    doc_ids: tuple[str, ...]
    probabilities: np.ndarray  # (n_words, n_docs), rows sum to 1

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", probs)
        if probs.shape != (len(self.vocabulary), len(self.doc_ids)):
            raise ScalingError("probability shape mismatch")
        if probs.size and (np.abs(probs.sum(axis=1) - 1.0) > 1e-12).any():
            raise ScalingError("probability rows must sum to 1")
        probs.setflags(write=False)


@dataclass(frozen=True)
class WordScoreTable:
    dimension: str
    scores: dict[str, float]  # word -> score

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class VirginEstimate:
    """Raw position estimate for one virgin document.

    ci_low/ci_high bound the raw score; the transformed fields are filled
    only after a transformation ran.
    """

    document_id: str
    dimension: str
    variant: str
    raw: float
    se: float
    ci_low: float
    ci_high: float
    scored_token_count: int
    transform: str | None = None
    transformed: float | None = None
    transformed_ci_low: float | None = None
    transformed_ci_high: float | None = None


@dataclass(frozen=True)
class TransformSpec:
    """Parameters of the affine map applied to raw virgin scores."""

    kind: str  # "LBG" or "MV"
    virgin_mean: float | None = None
    reference_sd: float | None = None
    virgin_sd: float | None = None
    anchor_low: str | None = None
    anchor_high: str | None = None
    anchor_raw: tuple[float, float] | None = None
    anchor_assigned: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind == "LBG":
            if not self.virgin_sd or self.virgin_sd <= 0:
                raise TransformError("LBG requires a positive virgin-score SD")
        elif self.kind == "MV":
            if self.anchor_raw is None or self.anchor_raw[0] == self.anchor_raw[1]:
                raise TransformError("MV requires anchors with distinct raw scores")
            if self.anchor_assigned is None or self.anchor_assigned[0] == self.anchor_assigned[1]:
                raise TransformError("MV requires anchors with distinct assigned scores")
        else:
            raise TransformError(f"unknown transform kind {self.kind!r}")


def word_probabilities(reference: ReferenceSet, relative_frequencies: bool = True) -> WordProbabilityTable:
    """Per-word probabilities over reference documents.

    With relative_frequencies (the default) the word frequency entering the
    normalization is count(w, r) / total(r); switching it off uses raw
    counts instead.  Words absent from every reference document are
    excluded.
    """
    matrix = reference.matrix
    if matrix.n_words == 0:
        raise ScalingError("reference matrix has an empty vocabulary")
    totals = matrix.totals.astype(float)
    if (totals == 0).any():
        empty = [d for d, t in zip(matrix.doc_ids, matrix.totals) if t == 0]
        raise ScalingError("reference document(s) without tokens: " + ", ".join(empty))
    freq = matrix.counts / totals if relative_frequencies else matrix.counts.astype(float)
    row_sums = freq.sum(axis=1)
    keep = row_sums > 0
    probs = freq[keep] / row_sums[keep, None]
    vocab = tuple(w for w, k in zip(matrix.vocabulary, keep) if k)
    return WordProbabilityTable(vocab, matrix.doc_ids, probs)


def word_scores(probs: WordProbabilityTable, reference: ReferenceSet, dimension: str) -> WordScoreTable:
    """Probability-weighted average of the assigned reference scores."""
    if tuple(reference.matrix.doc_ids) != probs.doc_ids:
        raise ScalingError("probability table and reference set cover different documents")
    assigned = reference.assigned(dimension)
    raw = probs.probabilities @ assigned
    # A word score is a convex combination of assigned scores; clip the
    # last-ulp float overshoot so the range invariant holds exactly.
    raw = np.clip(raw, assigned.min(), assigned.max())
    return WordScoreTable(dimension, {w: float(s) for w, s in zip(probs.vocabulary, raw)})


def build_wordscores(reference: ReferenceSet, dimension: str,
                     relative_frequencies: bool = True) -> WordScoreTable:
    """Convenience: word_probabilities + word_scores in one call."""
    return word_scores(word_probabilities(reference, relative_frequencies), reference, dimension)


def score_virgin(virgin: TermDocumentMatrix, table: WordScoreTable, variant: str = VARIANT_COOCCUR) -> list[VirginEstimate]:
    """Score each virgin document as a weighted average of word scores.

    The weight of word w in document v is count(w, v) divided by the
    document's total token count (variant ``total``) or by its count of
    scored tokens (variant ``cooccur``).  The standard error uses the
    frequency-weighted dispersion of word scores around the document
    score: se = sqrt(sum_w weight_w * (score_w - raw)^2 / n_scored).
    """
    variant = normalize_variant(variant)
    if len(table) == 0:
        raise ScalingError("word-score table is empty")
    idx = [i for i, w in enumerate(virgin.vocabulary) if w in table.scores]
    scores = np.array([table.scores[virgin.vocabulary[i]] for i in idx], dtype=float)
    sub = virgin.counts[idx, :] if idx else np.zeros((0, virgin.n_docs), dtype=np.int64)
    scored_tokens = sub.sum(axis=0)
    unscorable = [d for d, n in zip(virgin.doc_ids, scored_tokens) if n == 0]
    if unscorable:
        raise UnscorableDocumentError(unscorable)

    denom = virgin.totals.astype(float) if variant == VARIANT_TOTAL else scored_tokens.astype(float)
    numer = scores @ sub
    raw = numer / denom
    weights = sub / denom  # frequency weights over the scored words only
    dispersion = ((scores[:, None] - raw[None, :]) ** 2 * weights).sum(axis=0)
    se = np.sqrt(dispersion / scored_tokens)

    return [
        VirginEstimate(
            document_id=doc_id,
            dimension=table.dimension,
            variant=variant,
            raw=float(raw[j]),
            se=float(se[j]),
            ci_low=float(raw[j] - Z_95 * se[j]),
            ci_high=float(raw[j] + Z_95 * se[j]),
            scored_token_count=int(scored_tokens[j]),
        )
        for j, doc_id in enumerate(virgin.doc_ids)
    ]


def _apply_affine(estimates, slope, intercept, kind, exact=None):
    """Map raw scores and their CI bounds; `exact` pins raw values to
    bit-exact outputs (used for MV anchor recovery)."""
    exact = exact or {}
    out = []
    for est in estimates:
        if est.raw in exact:
            transformed = exact[est.raw]
        else:
            transformed = est.raw * slope + intercept
        lo = est.ci_low * slope + intercept
        hi = est.ci_high * slope + intercept
        if lo > hi:
            lo, hi = hi, lo
        out.append(
            replace(
                est,
                transform=kind,
                transformed=float(transformed),
                transformed_ci_low=float(lo),
                transformed_ci_high=float(hi),
            )
        )
    return out


def lbg_transform(
    estimates: list[VirginEstimate], reference: ReferenceSet, dimension: str
) -> tuple[list[VirginEstimate], TransformSpec]:
    """Rescale raw scores to the reference-score SD, keeping their mean.

    transformed = (raw - mean(raw)) * sd(assigned) / sd(raw) + mean(raw),
    with population SDs on both sides.
    """
    if len(estimates) < 2:
        raise TransformError("LBG needs at least two virgin estimates")
    raws = np.array([e.raw for e in estimates], dtype=float)
    virgin_sd = float(raws.std())
    if virgin_sd == 0:
        raise TransformError("virgin raw scores have zero variance; LBG is undefined")
    virgin_mean = float(raws.mean())
    reference_sd = float(reference.assigned(dimension).std())
    slope = reference_sd / virgin_sd
    intercept = virgin_mean * (1.0 - slope)
    spec = TransformSpec(
        kind="LBG", virgin_mean=virgin_mean, reference_sd=reference_sd, virgin_sd=virgin_sd
    )
    return _apply_affine(estimates, slope, intercept, "LBG"), spec


def default_anchors(reference: ReferenceSet, dimension: str) -> tuple[str, str]:
    """The reference documents with the lowest and highest assigned score."""
    assigned = reference.assigned(dimension)
    low = int(np.argmin(assigned))
    high = int(np.argmax(assigned))
    return reference.matrix.doc_ids[low], reference.matrix.doc_ids[high]


def _anchor_raw_scores(reference, table, anchors, variant):
    for anchor in anchors:
        if anchor not in reference.matrix.doc_ids:
            raise ScalingError(f"anchor {anchor!r} is not a reference document")
    ref_estimates = {e.document_id: e for e in score_virgin(reference.matrix, table, variant)}
    return tuple(ref_estimates[a].raw for a in anchors)


def mv_transform(
    estimates: list[VirginEstimate],
    reference: ReferenceSet,
    table: WordScoreTable,
    anchors: tuple[str, str],
    variant: str = VARIANT_COOCCUR,
) -> tuple[list[VirginEstimate], TransformSpec]:
    """Anchor-based rescaling that recovers two assigned scores exactly.

    The anchor documents are first scored as if they were virgin texts;
    the affine map sending their raw scores to their assigned scores is
    then applied to every estimate.  Raw scores exactly equal to an
    anchor's raw score map to the assigned score bit-exactly.
    """
    variant = normalize_variant(variant)
    low, high = anchors
    raw_low, raw_high = _anchor_raw_scores(reference, table, anchors, variant)
    if raw_low == raw_high:
        raise TransformError(
            f"anchors {low!r} and {high!r} have equal raw scores ({raw_low}); cannot anchor"
        )
    dimension = table.dimension
    a_low = float(reference.scores[low][dimension]) if dimension in reference.scores.get(low, {}) else None
    a_high = float(reference.scores[high][dimension]) if dimension in reference.scores.get(high, {}) else None
    if a_low is None or a_high is None:
        missing = low if a_low is None else high
        raise ScalingError(f"anchor {missing!r} has no score on dimension {dimension!r}")
    if a_low == a_high:
        raise TransformError(f"anchors {low!r} and {high!r} share the assigned score {a_low}")
    slope = (a_high - a_low) / (raw_high - raw_low)
    intercept = a_low - raw_low * slope
    spec = TransformSpec(
        kind="MV",
        anchor_low=low,
        anchor_high=high,
        anchor_raw=(raw_low, raw_high),
        anchor_assigned=(a_low, a_high),
    )
    exact = {raw_low: a_low, raw_high: a_high}
    return _apply_affine(estimates, slope, intercept, "MV", exact=exact), spec


@dataclass(frozen=True)
class TradeoffRow:
    """Reference document rescored as virgin and pushed through MV."""

    document_id: str
    assigned: float
    mv_score: float
    difference: float
    pct_difference: float | None  # None when the assigned score is 0


def mv_tradeoff(
    reference: ReferenceSet,
    table: WordScoreTable,
    anchors: tuple[str, str],
    variant: str = VARIANT_COOCCUR,
) -> list[TradeoffRow]:
    """Feed the reference documents back in as virgin texts and compare
    their MV-transformed scores with the exogenous assigned scores."""
    estimates = score_virgin(reference.matrix, table, variant)
    transformed, _ = mv_transform(estimates, reference, table, anchors, variant)
    assigned = reference.assigned(table.dimension)
    rows = []
    for est, a in zip(transformed, assigned):
        diff = est.transformed - a
        pct = None if a == 0 else 100.0 * diff / a
        rows.append(TradeoffRow(est.document_id, float(a), float(est.transformed), float(diff), pct))
    return rows


@dataclass(frozen=True)
class VariantComparison:
    """Raw scores under both frequency normalizations, plus agreement stats."""

    document_ids: tuple[str, ...]
    raw_total: np.ndarray
    raw_cooccur: np.ndarray
    pearson_r: float | None
    concordance: "validation.ConcordanceResult | None"


def compare_variants(virgin: TermDocumentMatrix, table: WordScoreTable) -> VariantComparison:
    """Score under both variants and correlate the paired raw scores.

    Correlation statistics are left None when they are undefined (fewer
    than three documents or zero variance in either variant).
    """
    est_total = score_virgin(virgin, table, VARIANT_TOTAL)
    est_cooccur = score_virgin(virgin, table, VARIANT_COOCCUR)
    raw_total = np.array([e.raw for e in est_total])
    raw_cooccur = np.array([e.raw for e in est_cooccur])
    pearson_r = None
    concordance = None
    try:
        pearson_r = validation.pearson(raw_total, raw_cooccur)
        concordance = validation.ccc(raw_total, raw_cooccur)
    except validation.ValidationError:
        pass
    return VariantComparison(virgin.doc_ids, raw_total, raw_cooccur, pearson_r, concordance)


def export_wordscores(document: Document, table: WordScoreTable) -> list[tuple[str, int, float | None]]:
    """Per-word rows (word, frequency in document, score or None) in
    first-appearance order; unscored words carry a None score."""
    counts = Counter(document.tokens)
    seen = set()
    rows = []
    for tok in document.tokens:
        if tok in seen:
            continue
        seen.add(tok)
        rows.append((tok, counts[tok], table.scores.get(tok)))
    return rows


# --------------------------------------------------------------------------
# CSV interfaces
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".6g")


def load_reference_scores(path: str | Path) -> dict[str, dict[str, float]]:
    """Read `doc_id,dimension,score` rows into the ReferenceSet mapping."""
    scores: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"doc_id", "dimension", "score"}
        if not required.issubset(reader.fieldnames or []):
            raise ScalingError(f"{path}: expected columns doc_id,dimension,score")
        for row in reader:
            doc, dim = row["doc_id"].strip(), row["dimension"].strip()
            try:
                value = float(row["score"])
            except ValueError:
                raise ScalingError(f"{path}: non-numeric score for ({doc}, {dim})")
            per_doc = scores.setdefault(doc, {})
            if dim in per_doc:
                raise ScalingError(f"{path}: duplicate score for ({doc}, {dim})")
            per_doc[dim] = value
    return scores


ESTIMATE_COLUMNS = (
    "doc_id", "dimension", "variant", "raw", "se",
    "ci_low", "ci_high", "transform", "transformed",
)


def write_estimates_csv(estimates: list[VirginEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ESTIMATE_COLUMNS)
        for e in estimates:
            writer.writerow([
                e.document_id, e.dimension, e.variant,
                _fmt(e.raw), _fmt(e.se), _fmt(e.ci_low), _fmt(e.ci_high),
                e.transform or "", _fmt(e.transformed),
            ])


def read_estimates_csv(path: str | Path) -> list[VirginEstimate]:
    estimates = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ESTIMATE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ScalingError(f"{path}: missing estimate columns: {', '.join(missing)}")
        for row in reader:
            estimates.append(
                VirginEstimate(
                    document_id=row["doc_id"],
                    dimension=row["dimension"],
                    variant=row["variant"],
                    raw=float(row["raw"]),
                    se=float(row["se"]),
                    ci_low=float(row["ci_low"]),
                    ci_high=float(row["ci_high"]),
                    scored_token_count=0,
                    transform=row["transform"] or None,
                    transformed=float(row["transformed"]) if row["transformed"] else None,
                )
            )
    return estimates


def write_wordscore_table_csv(table: WordScoreTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "score"])
        for word in sorted(table.scores):
            writer.writerow([word, format(table.scores[word], ".12g")])


def read_wordscore_table_csv(path: str | Path, dimension: str) -> WordScoreTable:
    scores = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"word", "score"}.issubset(reader.fieldnames or []):
            raise ScalingError(f"{path}: expected columns word,score")
        for row in reader:
            scores[row["word"]] = float(row["score"])
    return WordScoreTable(dimension, scores)


def write_word_export_csv(rows, path: str | Path) -> None:
    """Write one document's `word,freq,score` rows; score is empty for
    unscored words."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "freq", "score"])
        for word, freq, score in rows:
            writer.writerow([word, freq, _fmt(score)])
