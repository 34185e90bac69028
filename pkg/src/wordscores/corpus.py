"""Document ingestion, tokenization, and term-document matrices.

Documents arrive through a CSV manifest, get tokenized into lowercase
word streams, and are counted into an immutable word-by-document matrix.
Frequency-based pruning (top-k stopwords, optional document-frequency
band) and corpus summary statistics live here too.
"""

from __future__ import annotations

import csv
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    """Malformed corpus, manifest, or matrix operation."""


# Symbols treated as currency markers during tokenization.
CURRENCY_SYMBOLS = "$€£¥₹¢₩₽₺₴₦"

# A token is a maximal run of letters, a maximal run of digits, or a run
# of currency symbols.  Hyphenated compounds split at the hyphen; the
# number/currency classes exist so the strip flags have something to act on.
_TOKEN_RE = re.compile(rf"[^\W\d_]+|\d+|[{CURRENCY_SYMBOLS}]+")


@dataclass(frozen=True)
class PreprocessConfig:
    """Tokenization and pruning options.

    min/max_doc_fraction bound the share of documents a word may appear
    in; words outside the band are pruned.  Both default to off, as does
    stemming.  top_k_stopwords is the number of highest-total words to
    drop per matrix.
    """

    strip_numbers: bool = True
    strip_currency: bool = True
    top_k_stopwords: int = 20
    min_doc_fraction: float | None = None
    max_doc_fraction: float | None = None
    stemming: bool = False

    def __post_init__(self):
        if self.top_k_stopwords < 0:
            raise CorpusError("top_k_stopwords must be >= 0")
        lo = 0.0 if self.min_doc_fraction is None else self.min_doc_fraction
        hi = 1.0 if self.max_doc_fraction is None else self.max_doc_fraction
        if not (0.0 <= lo < hi <= 1.0):
            raise CorpusError(
                f"document-frequency band must satisfy 0 <= min < max <= 1, got ({lo}, {hi})"
            )


@dataclass(frozen=True)
class Document:
    """One text with its manifest metadata.

    `text` holds the raw contents until tokenization fills `tokens`.
    """

    id: str
    label: str
    country: str
    year: int
    text: str = ""
    tokens: tuple[str, ...] = ()
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    role: str  # "reference" or "virgin"

    def __post_init__(self):
        if self.role not in ("reference", "virgin"):
            raise CorpusError(f"unknown corpus role {self.role!r}")
        if not self.documents:
            raise CorpusError("corpus must contain at least one document")
        seen = set()
        for doc in self.documents:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)

    def __len__(self):
        return len(self.documents)

    def countries(self) -> list[str]:
        return sorted({d.country for d in self.documents})

    def subset(self, country: str) -> "Corpus":
        docs = tuple(d for d in self.documents if d.country == country)
        if not docs:
            raise CorpusError(f"no documents for country {country!r}")
        return Corpus(docs, self.role)


MANIFEST_COLUMNS = ("id", "label", "country", "year", "path")


def load_documents(manifest: str | Path, role: str) -> Corpus:
    """Read a manifest CSV (id,label,country,year,path) into a Corpus.

    Each referenced file is read as UTF-8 text; tokenization happens
    separately so the raw text is retained.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise CorpusError(f"manifest not found: {manifest}")
    base = manifest.parent
    docs = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise CorpusError(f"manifest {manifest} missing columns: {', '.join(missing)}")
        for row in reader:
            doc_id = (row["id"] or "").strip()
            if not doc_id:
                raise CorpusError(f"manifest {manifest}: empty document id")
            try:
                year = int(row["year"])
            except (TypeError, ValueError):
                raise CorpusError(f"document {doc_id!r}: year {row['year']!r} is not an integer")
            path = Path(row["path"])
            if not path.is_absolute():
                path = base / path
            try:
                text = path.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise CorpusError(f"document file missing for id {doc_id!r}: {path}")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"document {doc_id!r} is not valid UTF-8: {exc}")
            docs.append(
                Document(
                    id=doc_id,
                    label=(row["label"] or "").strip(),
                    country=(row["country"] or "").strip(),
                    year=year,
                    text=text,
                )
            )
    return Corpus(tuple(docs), role)


def tokenize(text: str, config: PreprocessConfig | None = None) -> list[str]:
    """Lowercase and split text into tokens, applying the strip flags.

    Letters (including accented letters) form word tokens; digit runs and
    currency-symbol runs are kept as tokens only when the corresponding
    strip flag is off.  Punctuation never survives.
    """
    config = config or PreprocessConfig()
    text = unicodedata.normalize("NFC", text).lower()
    out = []
    for tok in _TOKEN_RE.findall(text):
        if tok[0].isdigit():
            if config.strip_numbers:
                continue
        elif tok[0] in CURRENCY_SYMBOLS:
            if config.strip_currency:
                continue
        elif config.stemming:
            tok = porter_stem(tok)
        out.append(tok)
    return out


def tokenize_corpus(corpus: Corpus, config: PreprocessConfig | None = None) -> Corpus:
    """Return a copy of the corpus with every document's tokens filled.

    Documents that carry tokens but no raw text are left as-is.
    """
    docs = tuple(
        d if (not d.text and d.tokens) else replace(d, tokens=tuple(tokenize(d.text, config)))
        for d in corpus.documents
    )
    return Corpus(docs, corpus.role)


@dataclass(frozen=True)
class TermDocumentMatrix:
    """Immutable word-by-document count matrix.

    `counts` has one row per vocabulary word and one column per document;
    `totals` are the per-document token totals and must equal the column
    sums exactly.
    """

    vocabulary: tuple[str, ...]
    doc_ids: tuple[str, ...]
    counts: np.ndarray  # (n_words, n_docs) int64
    totals: np.ndarray  # (n_docs,) int64

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        totals = np.asarray(self.totals, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "totals", totals)
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise CorpusError("duplicate words in vocabulary")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise CorpusError("duplicate document ids in matrix")
        if counts.shape != (len(self.vocabulary), len(self.doc_ids)):
            raise CorpusError("counts shape does not match vocabulary/doc_ids")
        if (counts < 0).any():
            raise CorpusError("negative counts")
        if not np.array_equal(counts.sum(axis=0), totals):
            raise CorpusError("per-document totals do not match column sums")
        counts.setflags(write=False)
        totals.setflags(write=False)

    @property
    def n_words(self) -> int:
        return len(self.vocabulary)

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def word_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def doc_index(self, doc_id: str) -> int:
        try:
            return self.doc_ids.index(doc_id)
        except ValueError:
            raise CorpusError(f"document {doc_id!r} not in matrix")


def build_matrix(corpus: Corpus) -> TermDocumentMatrix:
    """Count tokens into a TermDocumentMatrix (vocabulary sorted)."""
    if all(len(d.tokens) == 0 for d in corpus.documents):
        raise CorpusError("corpus has no tokens; tokenize it first or check the documents")
    doc_counters = [Counter(d.tokens) for d in corpus.documents]
    vocabulary = tuple(sorted(set().union(*doc_counters)))
    index = {w: i for i, w in enumerate(vocabulary)}
    counts = np.zeros((len(vocabulary), len(corpus.documents)), dtype=np.int64)
    for j, counter in enumerate(doc_counters):
        for word, c in counter.items():
            counts[index[word], j] = c
    totals = counts.sum(axis=0)
    return TermDocumentMatrix(vocabulary, tuple(d.id for d in corpus.documents), counts, totals)


def top_k_stopwords(matrix: TermDocumentMatrix, k: int) -> list[str]:
    """The k words with the highest total count.

    Ties break lexicographically; k beyond the vocabulary returns all of it.
    """
    if k < 0:
        raise CorpusError("k must be >= 0")
    totals = matrix.word_totals()
    order = sorted(range(matrix.n_words), key=lambda i: (-totals[i], matrix.vocabulary[i]))
    return [matrix.vocabulary[i] for i in order[:k]]


def apply_stoplist(matrix: TermDocumentMatrix, words) -> TermDocumentMatrix:
    """Drop the listed words; totals become the remaining-token totals."""
    drop = set(words)
    keep = [i for i, w in enumerate(matrix.vocabulary) if w not in drop]
    if not keep:
        raise CorpusError("stoplist removes the entire vocabulary")
    counts = matrix.counts[keep, :]
    vocab = tuple(matrix.vocabulary[i] for i in keep)
    return TermDocumentMatrix(vocab, matrix.doc_ids, counts, counts.sum(axis=0))


def subset_documents(matrix: TermDocumentMatrix, doc_ids) -> TermDocumentMatrix:
    """Keep only the listed documents, pruning words that no longer occur."""
    wanted = list(doc_ids)
    missing = [d for d in wanted if d not in matrix.doc_ids]
    if missing:
        raise CorpusError("documents not in matrix: " + ", ".join(missing))
    cols = [matrix.doc_index(d) for d in wanted]
    counts = matrix.counts[:, cols]
    alive = counts.sum(axis=1) > 0
    if not alive.any():
        raise CorpusError("document subset has no tokens")
    counts = counts[alive, :]
    vocab = tuple(w for w, a in zip(matrix.vocabulary, alive) if a)
    return TermDocumentMatrix(vocab, tuple(wanted), counts, counts.sum(axis=0))


def filter_document_frequency(
    matrix: TermDocumentMatrix,
    min_fraction: float | None,
    max_fraction: float | None,
) -> TermDocumentMatrix:
    """Drop words appearing in fewer than min_fraction or more than
    max_fraction of the documents.  None leaves that side open."""
    if min_fraction is None and max_fraction is None:
        return matrix
    df = (matrix.counts > 0).sum(axis=1) / matrix.n_docs
    keep = np.ones(matrix.n_words, dtype=bool)
    if min_fraction is not None:
        keep &= df >= min_fraction
    if max_fraction is not None:
        keep &= df <= max_fraction
    idx = [i for i in range(matrix.n_words) if keep[i]]
    if not idx:
        raise CorpusError("document-frequency filter removes the entire vocabulary")
    counts = matrix.counts[idx, :]
    vocab = tuple(matrix.vocabulary[i] for i in idx)
    return TermDocumentMatrix(vocab, matrix.doc_ids, counts, counts.sum(axis=0))


@dataclass(frozen=True)
class PreprocessResult:
    matrix: TermDocumentMatrix
    stopwords: tuple[str, ...]


def preprocess_corpus(corpus: Corpus, config: PreprocessConfig | None = None) -> PreprocessResult:
    """Tokenize, count, band-filter, and remove the top-k stopwords."""
    config = config or PreprocessConfig()
    matrix = build_matrix(tokenize_corpus(corpus, config))
    matrix = filter_document_frequency(matrix, config.min_doc_fraction, config.max_doc_fraction)
    stopwords = top_k_stopwords(matrix, config.top_k_stopwords)
    if stopwords:
        if len(stopwords) >= matrix.n_words:
            raise CorpusError(
                "top-k stopword removal would empty the vocabulary; lower top_k_stopwords"
            )
        matrix = apply_stoplist(matrix, stopwords)
    return PreprocessResult(matrix, tuple(stopwords))


@dataclass(frozen=True)
class CorpusStats:
    """Per-corpus word-count summary; SDs are sample SDs over documents."""

    n_docs: int
    total_mean: float
    total_sd: float
    unique_mean: float
    unique_sd: float
    single_document: bool = False  # SDs reported as 0 for one-document corpora


def corpus_stats(matrix: TermDocumentMatrix) -> CorpusStats:
    """Mean/SD of per-document token totals and distinct word counts."""
    totals = matrix.totals.astype(float)
    uniques = (matrix.counts > 0).sum(axis=0).astype(float)
    single = matrix.n_docs == 1
    def _sd(v):
        return 0.0 if single else float(v.std(ddof=1))
    return CorpusStats(
        n_docs=matrix.n_docs,
        total_mean=float(totals.mean()),
        total_sd=_sd(totals),
        unique_mean=float(uniques.mean()),
        unique_sd=_sd(uniques),
        single_document=single,
    )


def _skewness(values: np.ndarray) -> float:
    """Population-moment standardized third moment; 0 for constant input."""
    values = np.asarray(values, dtype=float)
    m = values.mean()
    m2 = ((values - m) ** 2).mean()
    if m2 == 0:
        return 0.0
    m3 = ((values - m) ** 3).mean()
    return float(m3 / m2**1.5)


@dataclass(frozen=True)
class OverlapDiagnostics:
    """How well a reference vocabulary covers a virgin corpus."""

    token_coverage: dict[str, float]  # virgin doc id -> share of its tokens known
    vocabulary_overlap: float  # Jaccard overlap of the two vocabularies
    reference_skewness: float  # skewness of reference word totals
    virgin_skewness: float


def diagnose_overlap(reference: TermDocumentMatrix, virgin: TermDocumentMatrix) -> OverlapDiagnostics:
    ref_vocab = set(reference.vocabulary)
    known = np.array([w in ref_vocab for w in virgin.vocabulary], dtype=bool)
    coverage = {}
    for j, doc_id in enumerate(virgin.doc_ids):
        total = virgin.totals[j]
        covered = virgin.counts[known, j].sum() if total else 0
        coverage[doc_id] = float(covered / total) if total else 0.0
    vv = set(virgin.vocabulary)
    union = ref_vocab | vv
    overlap = len(ref_vocab & vv) / len(union) if union else 0.0
    return OverlapDiagnostics(
        token_coverage=coverage,
        vocabulary_overlap=float(overlap),
        reference_skewness=_skewness(reference.word_totals()),
        virgin_skewness=_skewness(virgin.word_totals()),
    )


def write_matrix_csv(matrix: TermDocumentMatrix, path: str | Path) -> None:
    """Write rows of `word,<count per document>` with doc ids as header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", *matrix.doc_ids])
        for i, word in enumerate(matrix.vocabulary):
            writer.writerow([word, *matrix.counts[i, :].tolist()])


def read_matrix_csv(path: str | Path) -> TermDocumentMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "word" or len(header) < 2:
            raise CorpusError(f"{path}: expected header 'word,<doc ids...>'")
        doc_ids = tuple(header[1:])
        vocab = []
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise CorpusError(f"{path}: row for {row[0]!r} has {len(row) - 1} counts, expected {len(doc_ids)}")
            vocab.append(row[0])
            try:
                rows.append([int(c) for c in row[1:]])
            except ValueError:
                raise CorpusError(f"{path}: non-integer count in row for {row[0]!r}")
    counts = np.array(rows, dtype=np.int64).reshape(len(vocab), len(doc_ids))
    return TermDocumentMatrix(tuple(vocab), doc_ids, counts, counts.sum(axis=0))


# --------------------------------------------------------------------------
# Porter stemmer (classic 1980 algorithm).  Inlined because no stemming
# library is available in this environment; used only when
# PreprocessConfig.stemming is on.
# --------------------------------------------------------------------------

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of VC sequences in the [C](VC)^m[V] decomposition."""
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if prev_vowel:
                m += 1
            prev_vowel = False
        else:
            prev_vowel = True
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _is_consonant(word, len(word) - 1)


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    if not (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
    ):
        return False
    return word[-1] not in "wxy"


def _replace_suffix(word, suffix, repl, condition):
    if word.endswith(suffix):
        stem = word[: len(word) - len(suffix)]
        if condition(stem):
            return stem + repl, True
        return word, True  # suffix matched, rule consumed
    return word, False


_STEP2 = [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]

_STEP3 = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]

_STEP4 = [
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
]


def porter_stem(word: str) -> str:
    if len(word) <= 2:
        return word

    # Step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]

    # Step 1b
    fired = False
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed") and _has_vowel(word[:-2]):
        word = word[:-2]
        fired = True
    elif word.endswith("ing") and _has_vowel(word[:-3]):
        word = word[:-3]
        fired = True
    if fired:
        if word.endswith(("at", "bl", "iz")):
            word += "e"
        elif _ends_double_consonant(word) and word[-1] not in "lsz":
            word = word[:-1]
        elif _measure(word) == 1 and _ends_cvc(word):
            word += "e"

    # Step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    # Step 2
    for suffix, repl in _STEP2:
        word, matched = _replace_suffix(word, suffix, repl, lambda s: _measure(s) > 0)
        if matched:
            break

    # Step 3
    for suffix, repl in _STEP3:
        word, matched = _replace_suffix(word, suffix, repl, lambda s: _measure(s) > 0)
        if matched:
            break

    # Step 4
    for suffix in _STEP4:
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if _measure(stem) > 1:
                if suffix == "ion" and stem and stem[-1] not in "st":
                    break
                word = stem
            break

    # Step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            word = stem

    # Step 5b
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        word = word[:-1]

    return word
