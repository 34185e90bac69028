"""Batch front end.

Single-purpose subcommands (preprocess, score, transform, rescale,
validate, construct, diagnose, plotdata) wrap the library modules;
``run`` executes a full scaling grid from a config file: one cell per
country x dimension x reference-score source x variant x transform,
followed by benchmark concordances and an optional multinomial model
comparison.  Outputs are UTF-8 CSVs; runs are deterministic for a fixed
config and seed.

Exit codes: 0 all good, 1 runtime failure, 2 bad usage or config,
3 partial cell failures in a grid run.
"""

from __future__ import annotations

import argparse
import csv
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import construct as construct_mod
from . import corpus as corpus_mod
from . import scaling, validation

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

TRANSFORMS = ("lbg", "mv")


class ConfigError(ValueError):
    """Invalid run configuration."""


# --------------------------------------------------------------------------
# Config file
# --------------------------------------------------------------------------

def _parse_blocks(text: str):
    """Parse `key = value` lines with repeatable [section] blocks."""
    top: dict[str, str] = {}
    blocks: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = {}
            blocks.append((line[1:-1].strip().lower(), current))
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        target = top if current is None else current
        target[key.strip().lower()] = value.strip()
    return top, blocks


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _parse_bool(value: str, key: str) -> bool:
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")


@dataclass
class RunConfig:
    reference_manifest: Path
    virgin_manifest: Path
    score_files: list[tuple[str, Path]]
    preprocess: corpus_mod.PreprocessConfig
    dimensions: list[str]
    variants: list[str]
    transforms: list[str]
    rescales: list[str]
    ci_method: str = "asymptotic"
    anchors: dict[tuple[str, str, str | None], tuple[str, str]] = field(default_factory=dict)
    externals: list[tuple[str, Path]] = field(default_factory=list)
    crosswalk: Path | None = None
    construct_labels: Path | None = None
    construct_features: list[str] = field(default_factory=list)
    output_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1

    def validate(self):
        for label, path in [("reference manifest", self.reference_manifest),
                            ("virgin manifest", self.virgin_manifest)]:
            if not Path(path).is_file():
                raise ConfigError(f"{label} not found: {path}")
        if not self.score_files:
            raise ConfigError("at least one [scores] block is required")
        seen = set()
        for name, path in self.score_files:
            if name in seen:
                raise ConfigError(f"duplicate score source name {name!r}")
            seen.add(name)
            if not Path(path).is_file():
                raise ConfigError(f"score file for {name!r} not found: {path}")
        for name, path in self.externals:
            if not Path(path).is_file():
                raise ConfigError(f"external file for {name!r} not found: {path}")
        if self.crosswalk is not None and not Path(self.crosswalk).is_file():
            raise ConfigError(f"crosswalk not found: {self.crosswalk}")
        if self.construct_labels is not None and not Path(self.construct_labels).is_file():
            raise ConfigError(f"construct labels not found: {self.construct_labels}")
        if not self.dimensions:
            raise ConfigError("[grid] dimensions must be non-empty")
        for variant in self.variants:
            scaling.normalize_variant(variant)
        for transform in self.transforms:
            if transform not in TRANSFORMS:
                raise ConfigError(f"unknown transform {transform!r}; use lbg or mv")
        for rescale in self.rescales:
            if rescale not in validation.RESCALE_MODES:
                raise ConfigError(f"unknown rescale mode {rescale!r}; use wd or pc")
        if self.ci_method not in ("asymptotic", "bootstrap"):
            raise ConfigError(f"unknown ci_method {self.ci_method!r}; use asymptotic or bootstrap")
        if self.externals and self.crosswalk is None:
            raise ConfigError("external benchmarks need a [crosswalk] block")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


def parse_config(path: str | Path, output_dir: str | None = None,
                 seed: int | None = None, jobs: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    top, blocks = _parse_blocks(path.read_text(encoding="utf-8"))
    base = path.parent

    def _resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    single: dict[str, dict[str, str]] = {}
    scores, externals, anchor_blocks = [], [], []
    for name, block in blocks:
        if name == "scores":
            scores.append(block)
        elif name == "external":
            externals.append(block)
        elif name == "anchors":
            anchor_blocks.append(block)
        elif name in ("reference", "virgin", "preprocess", "grid", "crosswalk", "construct"):
            if name in single:
                raise ConfigError(f"section [{name}] given twice")
            single[name] = block
        else:
            raise ConfigError(f"unknown config section [{name}]")

    for required in ("reference", "virgin", "grid"):
        if required not in single:
            raise ConfigError(f"missing required section [{required}]")
    for section in ("reference", "virgin"):
        if "manifest" not in single[section]:
            raise ConfigError(f"[{section}] needs a manifest key")

    pp = single.get("preprocess", {})
    def _fraction(key):
        if key not in pp or pp[key] == "":
            return None
        try:
            return float(pp[key])
        except ValueError:
            raise ConfigError(f"[preprocess] {key}: expected a number, got {pp[key]!r}")
    try:
        preprocess = corpus_mod.PreprocessConfig(
            strip_numbers=_parse_bool(pp.get("strip_numbers", "true"), "strip_numbers"),
            strip_currency=_parse_bool(pp.get("strip_currency", "true"), "strip_currency"),
            top_k_stopwords=int(pp.get("top_k_stopwords", "20")),
            min_doc_fraction=_fraction("min_doc_fraction"),
            max_doc_fraction=_fraction("max_doc_fraction"),
            stemming=_parse_bool(pp.get("stemming", "false"), "stemming"),
        )
    except (ValueError, corpus_mod.CorpusError) as exc:
        raise ConfigError(f"[preprocess]: {exc}")

    score_files = []
    for block in scores:
        if "name" not in block or "path" not in block:
            raise ConfigError("every [scores] block needs name and path")
        score_files.append((block["name"], _resolve(block["path"])))

    external_files = []
    for block in externals:
        if "name" not in block or "path" not in block:
            raise ConfigError("every [external] block needs name and path")
        external_files.append((block["name"], _resolve(block["path"])))

    anchors = {}
    for block in anchor_blocks:
        missing = [k for k in ("country", "dimension", "low", "high") if k not in block]
        if missing:
            raise ConfigError(f"[anchors] block missing keys: {', '.join(missing)}")
        key = (block["country"], block["dimension"], block.get("source"))
        anchors[key] = (block["low"], block["high"])

    if "crosswalk" in single and "path" not in single["crosswalk"]:
        raise ConfigError("[crosswalk] needs a path key")

    grid = single["grid"]
    config = RunConfig(
        reference_manifest=_resolve(single["reference"]["manifest"]),
        virgin_manifest=_resolve(single["virgin"]["manifest"]),
        score_files=score_files,
        preprocess=preprocess,
        dimensions=_split_list(grid.get("dimensions", "")),
        variants=_split_list(grid.get("variants", "cooccur")),
        transforms=_split_list(grid.get("transforms", "lbg")),
        rescales=_split_list(grid.get("rescales", "wd")),
        ci_method=grid.get("ci_method", "asymptotic"),
        anchors=anchors,
        externals=external_files,
        crosswalk=_resolve(single["crosswalk"]["path"]) if "crosswalk" in single else None,
        construct_labels=(
            _resolve(single["construct"]["labels"])
            if "construct" in single and "labels" in single["construct"]
            else None
        ),
        construct_features=_split_list(single.get("construct", {}).get("features", "")),
        output_dir=Path(output_dir) if output_dir else Path(top.get("output_dir", "out")),
        seed=int(seed if seed is not None else top.get("seed", "0")),
        jobs=int(jobs if jobs is not None else top.get("jobs", "1")),
    )
    config.variants = [scaling.normalize_variant(v) for v in config.variants]
    if not config.construct_features:
        config.construct_features = list(config.dimensions)
    config.validate()
    return config


# --------------------------------------------------------------------------
# Grid run
# --------------------------------------------------------------------------

@dataclass
class CellSpec:
    """Everything one grid cell needs, picklable for worker pools."""

    name: str
    country: str
    dimension: str
    source: str
    variant: str
    transform: str
    reference_matrix: corpus_mod.TermDocumentMatrix
    virgin_matrix: corpus_mod.TermDocumentMatrix
    scores: dict[str, dict[str, float]]
    anchors: tuple[str, str] | None


@dataclass
class CellResult:
    name: str
    status: str  # ok / failed / skipped
    reason: str = ""
    estimates: list[scaling.VirginEstimate] = field(default_factory=list)
    table: scaling.WordScoreTable | None = None
    tradeoff: list[scaling.TradeoffRow] = field(default_factory=list)
    country: str = ""
    dimension: str = ""
    source: str = ""
    variant: str = ""
    transform: str = ""


def _cell_result(spec: CellSpec, status: str, **kwargs) -> CellResult:
    return CellResult(
        spec.name, status,
        country=spec.country, dimension=spec.dimension, source=spec.source,
        variant=spec.variant, transform=spec.transform, **kwargs,
    )


def execute_cell(spec: CellSpec) -> CellResult:
    """Run one grid cell; failures are captured, never raised."""
    try:
        scored_docs = [
            d for d in spec.reference_matrix.doc_ids
            if spec.dimension in spec.scores.get(d, {})
        ]
        if len(scored_docs) < 2:
            return _cell_result(
                spec, "skipped",
                reason=f"fewer than 2 reference documents scored on {spec.dimension!r} for {spec.source!r}",
            )
        if len({spec.scores[d][spec.dimension] for d in scored_docs}) < 2:
            return _cell_result(
                spec, "skipped",
                reason=f"reference scores on {spec.dimension!r} for {spec.source!r} are all equal",
            )
        matrix = (
            spec.reference_matrix
            if len(scored_docs) == spec.reference_matrix.n_docs
            else corpus_mod.subset_documents(spec.reference_matrix, scored_docs)
        )
        reference = scaling.ReferenceSet(matrix, spec.scores)
        table = scaling.build_wordscores(reference, spec.dimension)
        estimates = scaling.score_virgin(spec.virgin_matrix, table, spec.variant)
        tradeoff: list[scaling.TradeoffRow] = []
        if spec.transform == "lbg":
            estimates, _ = scaling.lbg_transform(estimates, reference, spec.dimension)
        else:
            anchors = spec.anchors or scaling.default_anchors(reference, spec.dimension)
            estimates, _ = scaling.mv_transform(estimates, reference, table, anchors, spec.variant)
            tradeoff = scaling.mv_tradeoff(reference, table, anchors, spec.variant)
        return _cell_result(spec, "ok", estimates=estimates, table=table, tradeoff=tradeoff)
    except (corpus_mod.CorpusError, scaling.ScalingError, validation.ValidationError) as exc:
        return _cell_result(spec, "failed", reason=str(exc))
    except Exception:  # keep one cell's crash away from its neighbours
        return _cell_result(spec, "failed", reason=traceback.format_exc(limit=3))


@dataclass
class RunReport:
    output_dir: Path
    cells: list[CellResult]
    summary_rows: int = 0

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.status == "failed"]

    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failed else EXIT_OK


def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".6g")


def _write_diagnostics(path: Path, diag: corpus_mod.OverlapDiagnostics,
                       stopwords: dict[str, tuple[str, ...]] | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "key", "value"])
        for doc_id in sorted(diag.token_coverage):
            writer.writerow(["token_coverage", doc_id, _fmt(diag.token_coverage[doc_id])])
        writer.writerow(["vocabulary_overlap", "", _fmt(diag.vocabulary_overlap)])
        writer.writerow(["reference_skewness", "", _fmt(diag.reference_skewness)])
        writer.writerow(["virgin_skewness", "", _fmt(diag.virgin_skewness)])
        for role, words in (stopwords or {}).items():
            for rank, word in enumerate(words, 1):
                writer.writerow([f"{role}_stopword", word, rank])


def _write_tradeoff(path: Path, rows: list[scaling.TradeoffRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "exogenous", "mv_score", "difference", "pct_difference"])
        for row in rows:
            writer.writerow([
                row.document_id, _fmt(row.assigned), _fmt(row.mv_score),
                _fmt(row.difference),
                "undefined" if row.pct_difference is None else _fmt(row.pct_difference),
            ])


def _write_word_export(path: Path, docs, table: scaling.WordScoreTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "word", "freq", "score"])
        for doc in docs:
            for word, freq, score in scaling.export_wordscores(doc, table):
                writer.writerow([doc.id, word, freq, _fmt(score)])


SUMMARY_COLUMNS = ("dimension", "variant", *validation.REPORT_COLUMNS)


def run_pipeline(config: RunConfig) -> RunReport:
    """Execute the full grid and write all reports under output_dir."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(exist_ok=True)
    (out / "diagnostics").mkdir(exist_ok=True)

    reference_corpus = corpus_mod.load_documents(config.reference_manifest, "reference")
    virgin_corpus = corpus_mod.load_documents(config.virgin_manifest, "virgin")
    scores_by_source = {
        name: scaling.load_reference_scores(path) for name, path in config.score_files
    }

    countries = sorted(set(reference_corpus.countries()) | set(virgin_corpus.countries()))
    prepared: dict[str, tuple] = {}
    prep_errors: dict[str, str] = {}
    for country in countries:
        try:
            ref_sub = reference_corpus.subset(country)
            virgin_sub = virgin_corpus.subset(country)
            ref_prep = corpus_mod.preprocess_corpus(ref_sub, config.preprocess)
            virgin_prep = corpus_mod.preprocess_corpus(virgin_sub, config.preprocess)
            tokenized_virgin = corpus_mod.tokenize_corpus(virgin_sub, config.preprocess)
            prepared[country] = (ref_prep.matrix, virgin_prep.matrix, tokenized_virgin.documents)
            _write_diagnostics(
                out / "diagnostics" / f"{country}.csv",
                corpus_mod.diagnose_overlap(ref_prep.matrix, virgin_prep.matrix),
                {"reference": ref_prep.stopwords, "virgin": virgin_prep.stopwords},
            )
        except corpus_mod.CorpusError as exc:
            prep_errors[country] = str(exc)

    specs: list[CellSpec] = []
    placeholders: list[CellResult] = []
    for country in countries:
        for dimension in config.dimensions:
            for source, _ in config.score_files:
                for variant in config.variants:
                    for transform in config.transforms:
                        name = "__".join((country, dimension, source, variant, transform))
                        if country in prep_errors:
                            placeholders.append(CellResult(
                                name, "failed", prep_errors[country],
                                country=country, dimension=dimension, source=source,
                                variant=variant, transform=transform,
                            ))
                            continue
                        ref_matrix, virgin_matrix, _docs = prepared[country]
                        anchors = config.anchors.get(
                            (country, dimension, source),
                            config.anchors.get((country, dimension, None)),
                        )
                        specs.append(CellSpec(
                            name=name, country=country, dimension=dimension,
                            source=source, variant=variant, transform=transform,
                            reference_matrix=ref_matrix, virgin_matrix=virgin_matrix,
                            scores=scores_by_source[source], anchors=anchors,
                        ))

    if config.jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            computed = list(pool.map(execute_cell, specs))
    else:
        computed = [execute_cell(spec) for spec in specs]

    by_name = {c.name: c for c in computed}
    by_name.update({c.name: c for c in placeholders})
    results = [by_name[name] for name in sorted(by_name)]

    for result in results:
        cell_dir = out / "cells" / result.name
        cell_dir.mkdir(exist_ok=True)
        if result.status != "ok":
            (cell_dir / "error.log").write_text(result.reason + "\n", encoding="utf-8")
            continue
        scaling.write_estimates_csv(result.estimates, cell_dir / "estimates.csv")
        scaling.write_wordscore_table_csv(result.table, cell_dir / "wordscores.csv")
        _write_word_export(cell_dir / "word_export.csv", prepared[result.country][2], result.table)
        if result.tradeoff:
            _write_tradeoff(cell_dir / "tradeoff.csv", result.tradeoff)

    with open(out / "cells.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "status", "reason"])
        for result in results:
            writer.writerow([result.name, result.status, result.reason.splitlines()[0] if result.reason else ""])

    summary_rows = 0
    merged = None
    if config.externals and config.crosswalk:
        merged = _merged_table(config, results)
        summary_rows = _write_summary(config, merged, out)
        if config.construct_labels is not None:
            _run_construct(config, merged, out)

    report = RunReport(out, results, summary_rows)
    return report


def _run_column(source: str, variant: str, transform: str) -> str:
    return f"ws_{source}_{variant}_{transform}"


def _merged_table(config: RunConfig, results: list[CellResult]) -> validation.MergeResult:
    runs: dict[str, pd.DataFrame] = {}
    for source, _ in config.score_files:
        for variant in config.variants:
            for transform in config.transforms:
                rows = []
                for result in results:
                    if result.status != "ok":
                        continue
                    if (result.source, result.variant, result.transform) != (source, variant, transform):
                        continue
                    for est in result.estimates:
                        rows.append({
                            "doc_id": est.document_id,
                            "dimension": est.dimension,
                            "raw": est.raw,
                            "transformed": est.transformed,
                        })
                if rows:
                    runs[_run_column(source, variant, transform)] = pd.DataFrame(rows)
    external_frames = [validation.read_external_csv(path) for _, path in config.externals]
    external = pd.concat(external_frames, ignore_index=True) if external_frames else None
    key_map = pd.read_csv(config.crosswalk, dtype=str)
    return validation.merge_estimates(runs, external, key_map)


def _external_sources(config: RunConfig, table: validation.EstimateTable) -> list[str]:
    run_columns = {
        _run_column(source, variant, transform)
        for source, _ in config.score_files
        for variant in config.variants
        for transform in config.transforms
    }
    return [c for c in table.source_columns() if c not in run_columns]


def _write_summary(config: RunConfig, merged: validation.MergeResult, out: Path) -> int:
    table = merged.table
    benchmarks = _external_sources(config, table)
    summary_path = out / "summary.csv"
    bench_path = out / "benchmarks.csv"
    n_rows = 0
    with open(summary_path, "w", newline="", encoding="utf-8") as sfh, \
         open(bench_path, "w", newline="", encoding="utf-8") as bfh:
        swriter = csv.DictWriter(sfh, fieldnames=SUMMARY_COLUMNS)
        swriter.writeheader()
        bwriter = csv.writer(bfh)
        bwriter.writerow(["dimension", "rescale", "benchmark_a", "benchmark_b",
                          "rho_c", "n", "ci_low", "ci_high", "pearson_r", "c_b"])
        for dimension in config.dimensions:
            subset = table.frame[table.frame["dimension"] == dimension]
            if subset.empty:
                continue
            sub_table = validation.EstimateTable(subset.reset_index(drop=True), dict(table.scales))
            for rescale in config.rescales:
                rescaled = {}
                for column in sub_table.source_columns():
                    try:
                        rescaled[column] = validation.rescale_unit(sub_table, column, rescale)
                    except validation.ValidationError:
                        continue
                for i, b1 in enumerate(benchmarks):
                    for b2 in benchmarks[i + 1:]:
                        if b1 not in rescaled or b2 not in rescaled:
                            continue
                        try:
                            result = validation.ccc(
                                rescaled[b1], rescaled[b2],
                                ci_method=config.ci_method, seed=config.seed,
                            )
                        except validation.ValidationError:
                            continue
                        cells = validation.report_row(result)
                        bwriter.writerow([dimension, rescale, b1, b2,
                                          cells["rho_c"], cells["n"], cells["ci_low"],
                                          cells["ci_high"], cells["pearson_r"], cells["c_b"]])
                for source, _ in config.score_files:
                    for variant in config.variants:
                        for transform in config.transforms:
                            column = _run_column(source, variant, transform)
                            if column not in rescaled:
                                continue
                            for benchmark in benchmarks:
                                if benchmark not in rescaled:
                                    continue
                                try:
                                    result = validation.ccc(
                                        rescaled[column], rescaled[benchmark],
                                        ci_method=config.ci_method, seed=config.seed,
                                    )
                                except validation.ValidationError:
                                    continue
                                row = {
                                    "dimension": dimension,
                                    "variant": variant,
                                    "reference": source,
                                    "benchmark": benchmark,
                                    "transformation": transform.upper(),
                                    "rescale": rescale,
                                }
                                row.update(validation.report_row(result))
                                swriter.writerow(row)
                                n_rows += 1
    return n_rows


def _run_construct(config: RunConfig, merged: validation.MergeResult, out: Path) -> None:
    labels = pd.read_csv(config.construct_labels, dtype=str)
    if "party_id" not in labels.columns or "class_label" not in labels.columns:
        raise ConfigError("construct labels need party_id and class_label columns")
    table = merged.table
    features = config.construct_features
    frame = table.frame[table.frame["dimension"].isin(features)]
    if frame.empty:
        return
    model_columns = [
        _run_column(source, variant, transform)
        for source, _ in config.score_files
        for variant in config.variants
        for transform in config.transforms
        if _run_column(source, variant, transform) in table.source_columns()
    ] + _external_sources(config, table)

    join_cols = ["party_id", "country"] if "country" in labels.columns else ["party_id"]
    wide_parts = {}
    for column in model_columns:
        wide = frame.pivot_table(index=["party_id", "country"], columns="dimension",
                                 values=column, aggfunc="first")
        wide = wide.reindex(columns=features)
        wide_parts[column] = wide
    index = None
    for wide in wide_parts.values():
        complete = wide.dropna().index
        index = complete if index is None else index.intersection(complete)
    if index is None or len(index) == 0:
        return
    base = pd.DataFrame(index=index).reset_index()
    base = base.merge(labels[join_cols + ["class_label"]].drop_duplicates(), on=join_cols, how="inner")
    if base.empty:
        return
    base = base.sort_values(["party_id", "country"], kind="stable").reset_index(drop=True)
    class_names = tuple(sorted(base["class_label"].unique()))
    if len(class_names) < 2:
        return
    class_index = {c: i for i, c in enumerate(class_names)}
    labels_arr = np.array([class_index[c] for c in base["class_label"]])

    construct_dir = out / "construct"
    construct_dir.mkdir(exist_ok=True)
    fits, fit_labels, stat_rows = [], [], []
    null_fit = None
    for column in model_columns:
        wide = wide_parts[column]
        predictors = wide.loc[list(zip(base["party_id"], base["country"]))].to_numpy(dtype=float)
        data = construct_mod.DesignMatrix(predictors, labels_arr, class_names, tuple(features))
        fit = construct_mod.fit_multinomial(data)
        if null_fit is None:
            null_fit = construct_mod.fit_multinomial(construct_mod.intercept_only(data))
        fits.append(fit)
        fit_labels.append(column)
        stat_rows.append({
            "model": column, "n": fit.n, "k": fit.k,
            "loglik": _fmt(fit.log_likelihood),
            "count_r2": _fmt(construct_mod.count_r2(fit, data)),
            "mcfadden_r2": _fmt(construct_mod.mcfadden_r2(fit, null_fit)),
            "bic": _fmt(construct_mod.bic(fit)),
        })
    if null_fit is not None:
        stat_rows.append({
            "model": "intercept_only", "n": null_fit.n, "k": null_fit.k,
            "loglik": _fmt(null_fit.log_likelihood),
            "count_r2": "", "mcfadden_r2": _fmt(0.0),
            "bic": _fmt(construct_mod.bic(null_fit)),
        })
    construct_mod.write_fit_stats_csv(stat_rows, construct_dir / "fit_stats.csv")
    with open(construct_dir / "bic_comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_a", "model_b", "bic_a", "bic_b", "delta_bic", "evidence"])
        for row in construct_mod.compare_models(fits, fit_labels):
            writer.writerow([row.model_a, row.model_b, _fmt(row.bic_a), _fmt(row.bic_b),
                             _fmt(row.delta_bic), row.evidence])


# --------------------------------------------------------------------------
# Plot data
# --------------------------------------------------------------------------

PLOT_KINDS = ("wordscore-distribution", "ccc-dotplot", "fit-bars")


def emit_plot_data(run_dir: str | Path, kind: str, out_path: str | Path,
                   cell: str | None = None, doc: str | None = None,
                   dimension: str | None = None, rescale: str | None = None) -> int:
    """Reshape run outputs into one tidy CSV for external plotting.

    Returns the number of data rows written.
    """
    run_dir = Path(run_dir)
    if kind == "wordscore-distribution":
        if cell is None:
            raise ConfigError("wordscore-distribution needs --cell")
        source = run_dir / "cells" / cell / "word_export.csv"
        if not source.is_file():
            raise ConfigError(f"no word export for cell {cell!r} ({source})")
        frame = pd.read_csv(source, dtype={"doc_id": str, "word": str})
        if doc is not None:
            frame = frame[frame["doc_id"] == doc]
            frame = frame[["word", "freq", "score"]]
        header = "# one row per distinct word; score empty when the word carries no word score"
        _write_tidy(frame, out_path, header)
        return len(frame)
    if kind == "ccc-dotplot":
        summary = pd.read_csv(run_dir / "summary.csv")
        bench = pd.read_csv(run_dir / "benchmarks.csv")
        if dimension is not None:
            summary = summary[summary["dimension"] == dimension]
            bench = bench[bench["dimension"] == dimension]
        if rescale is not None:
            summary = summary[summary["rescale"] == rescale]
            bench = bench[bench["rescale"] == rescale]
        rows = [
            {"role": "threshold", "label": f"{r.benchmark_a}/{r.benchmark_b}",
             "rho_c": r.rho_c, "ci_low": "", "ci_high": ""}
            for r in bench.itertuples()
        ] + [
            {"role": "candidate",
             "label": f"{r.reference}/{r.benchmark}/{r.transformation}/{r.rescale}",
             "rho_c": r.rho_c, "ci_low": r.ci_low, "ci_high": r.ci_high}
            for r in summary.itertuples()
        ]
        frame = pd.DataFrame(rows, columns=["role", "label", "rho_c", "ci_low", "ci_high"])
        header = "# threshold rows: benchmark-pair concordance; candidate rows: scaling-run concordance with CI"
        _write_tidy(frame, out_path, header)
        return len(frame)
    if kind == "fit-bars":
        stats = pd.read_csv(run_dir / "construct" / "fit_stats.csv")
        stats = stats[stats["model"] != "intercept_only"][["model", "count_r2", "mcfadden_r2"]]
        header = "# one row per fitted model with its classification fit statistics"
        _write_tidy(stats, out_path, header)
        return len(stats)
    raise ConfigError(f"unknown plot kind {kind!r}; use one of {', '.join(PLOT_KINDS)}")


def _write_tidy(frame: pd.DataFrame, out_path: str | Path, header: str) -> None:
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header + "\n")
        frame.to_csv(fh, index=False)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _cmd_preprocess(args) -> int:
    config = corpus_mod.PreprocessConfig(
        strip_numbers=not args.keep_numbers,
        strip_currency=not args.keep_currency,
        top_k_stopwords=args.top_k,
        min_doc_fraction=args.min_doc_fraction,
        max_doc_fraction=args.max_doc_fraction,
        stemming=args.stemming,
    )
    loaded = corpus_mod.load_documents(args.manifest, args.role)
    result = corpus_mod.preprocess_corpus(loaded, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_matrix_csv(result.matrix, out / "matrix.csv")
    (out / "stopwords.txt").write_text(
        "".join(w + "\n" for w in result.stopwords), encoding="utf-8"
    )
    stats = corpus_mod.corpus_stats(result.matrix)
    with open(out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_docs", "total_mean", "total_sd", "unique_mean", "unique_sd"])
        writer.writerow([stats.n_docs, _fmt(stats.total_mean), _fmt(stats.total_sd),
                         _fmt(stats.unique_mean), _fmt(stats.unique_sd)])
    print(f"wrote matrix ({result.matrix.n_words} words x {result.matrix.n_docs} docs) to {out}")
    return EXIT_OK


def _reference_from_files(matrix_path, scores_path, dimension):
    matrix = corpus_mod.read_matrix_csv(matrix_path)
    scores = scaling.load_reference_scores(scores_path)
    scored = [d for d in matrix.doc_ids if dimension in scores.get(d, {})]
    if len(scored) < 2:
        raise scaling.ScalingError(
            f"fewer than 2 reference documents scored on {dimension!r}"
        )
    if len(scored) < matrix.n_docs:
        matrix = corpus_mod.subset_documents(matrix, scored)
    return scaling.ReferenceSet(matrix, scores)


def _cmd_score(args) -> int:
    reference = _reference_from_files(args.ref_matrix, args.scores, args.dimension)
    table = scaling.build_wordscores(reference, args.dimension)
    virgin = corpus_mod.read_matrix_csv(args.virgin_matrix)
    estimates = scaling.score_virgin(virgin, table, args.variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scaling.write_wordscore_table_csv(table, out / f"wordscores_{args.dimension}.csv")
    scaling.write_estimates_csv(estimates, out / "estimates.csv")
    print(f"scored {len(estimates)} virgin documents on {args.dimension!r} ({args.variant})")
    return EXIT_OK


def _cmd_transform(args) -> int:
    estimates = scaling.read_estimates_csv(args.estimates)
    if not estimates:
        raise scaling.ScalingError("no estimates to transform")
    dimension = estimates[0].dimension
    variant = estimates[0].variant
    reference = _reference_from_files(args.ref_matrix, args.scores, dimension)
    if args.transform == "lbg":
        transformed, _ = scaling.lbg_transform(estimates, reference, dimension)
    else:
        table = (
            scaling.read_wordscore_table_csv(args.wordscores, dimension)
            if args.wordscores
            else scaling.build_wordscores(reference, dimension)
        )
        anchors = (
            tuple(args.anchors.split(",")) if args.anchors
            else scaling.default_anchors(reference, dimension)
        )
        if len(anchors) != 2:
            raise ConfigError("--anchors expects two comma-separated document ids")
        transformed, _ = scaling.mv_transform(estimates, reference, table, anchors, variant)
    scaling.write_estimates_csv(transformed, args.out)
    print(f"wrote {len(transformed)} {args.transform.upper()}-transformed estimates to {args.out}")
    return EXIT_OK


def _read_estimate_table(path) -> validation.EstimateTable:
    frame = pd.read_csv(path, dtype={"party_id": str, "country": str, "dimension": str})
    return validation.EstimateTable(frame)


def _cmd_rescale(args) -> int:
    table = _read_estimate_table(args.table)
    rescaled = validation.rescale_unit(table, args.column, args.rescale)
    frame = table.frame.copy()
    frame[f"{args.column}_rescaled"] = rescaled.map(lambda v: float(format(v, ".6g")) if pd.notna(v) else v)
    frame.to_csv(args.out, index=False)
    print(f"rescaled {args.column!r} ({args.rescale}) -> {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    table = _read_estimate_table(args.table)
    benchmarks = _split_list(args.benchmarks)
    report = validation.benchmark_matrix(
        table, args.candidate, benchmarks, args.rescale, dimension=args.dimension
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "x", "y", "rho_c", "n", "ci_low", "ci_high",
                         "pearson_r", "c_b", "passes"])
        for pair in report.pairs:
            cells = validation.report_row(pair.result)
            writer.writerow([
                pair.kind, pair.x, pair.y, cells["rho_c"], cells["n"],
                cells["ci_low"], cells["ci_high"], cells["pearson_r"], cells["c_b"],
                "" if pair.passes is None else str(pair.passes).lower(),
            ])
    verdict = "criterion-valid" if report.criterion_valid else "not criterion-valid"
    print(f"candidate {args.candidate!r} is {verdict}; report at {args.out}")
    return EXIT_OK


def _cmd_construct(args) -> int:
    features = _split_list(args.features) if args.features else None
    data = construct_mod.load_design_csv(args.data, features)
    fit = construct_mod.fit_multinomial(data)
    null_fit = construct_mod.fit_multinomial(construct_mod.intercept_only(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "model": "full", "n": fit.n, "k": fit.k,
            "loglik": _fmt(fit.log_likelihood),
            "count_r2": _fmt(construct_mod.count_r2(fit, data)),
            "mcfadden_r2": _fmt(construct_mod.mcfadden_r2(fit, null_fit)),
            "bic": _fmt(construct_mod.bic(fit)),
        },
        {
            "model": "intercept_only", "n": null_fit.n, "k": null_fit.k,
            "loglik": _fmt(null_fit.log_likelihood),
            "count_r2": _fmt(construct_mod.count_r2(null_fit, construct_mod.intercept_only(data))),
            "mcfadden_r2": _fmt(0.0),
            "bic": _fmt(construct_mod.bic(null_fit)),
        },
    ]
    construct_mod.write_fit_stats_csv(rows, out / "fit_stats.csv")
    construct_mod.write_coefficients_csv(fit, out / "coefficients.csv")
    delta = construct_mod.bic(fit) - construct_mod.bic(null_fit)
    with open(out / "bic_comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_a", "model_b", "delta_bic", "evidence"])
        writer.writerow(["full", "intercept_only", _fmt(delta), construct_mod.bic_evidence(delta)])
    flags = []
    if fit.separated:
        flags.append("separated")
    if not fit.converged:
        flags.append("not converged")
    note = f" ({', '.join(flags)})" if flags else ""
    print(f"fit n={fit.n} k={fit.k} loglik={fit.log_likelihood:.4f}{note}; outputs in {out}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    reference = corpus_mod.read_matrix_csv(args.ref_matrix)
    virgin = corpus_mod.read_matrix_csv(args.virgin_matrix)
    _write_diagnostics(Path(args.out), corpus_mod.diagnose_overlap(reference, virgin))
    print(f"wrote overlap diagnostics to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = parse_config(args.config, output_dir=args.out, seed=args.seed, jobs=args.jobs)
    report = run_pipeline(config)
    ok = sum(1 for c in report.cells if c.status == "ok")
    skipped = sum(1 for c in report.cells if c.status == "skipped")
    failed = len(report.failed)
    print(f"{ok} cells ok, {skipped} skipped, {failed} failed; outputs in {report.output_dir}")
    for cell in report.failed:
        print(f"  FAILED {cell.name}: {cell.reason.splitlines()[0]}", file=sys.stderr)
    return report.exit_code()


def _cmd_plotdata(args) -> int:
    rows = emit_plot_data(
        args.run, args.kind, args.out,
        cell=args.cell, doc=args.doc, dimension=args.dimension, rescale=args.rescale,
    )
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wordscores",
        description="Supervised text scaling with validation reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize a manifest into a term-document matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--role", choices=("reference", "virgin"), default="reference")
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--keep-numbers", action="store_true")
    p.add_argument("--keep-currency", action="store_true")
    p.add_argument("--min-doc-fraction", type=float, default=None)
    p.add_argument("--max-doc-fraction", type=float, default=None)
    p.add_argument("--stemming", action="store_true")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("score", help="score virgin documents against a reference matrix")
    p.add_argument("--ref-matrix", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--dimension", required=True)
    p.add_argument("--virgin-matrix", required=True)
    p.add_argument("--variant", choices=("total", "cooccur"), default="cooccur")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("transform", help="apply the LBG or MV transformation to raw estimates")
    p.add_argument("--estimates", required=True)
    p.add_argument("--ref-matrix", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--transform", choices=TRANSFORMS, required=True)
    p.add_argument("--anchors", default=None, help="low,high document ids (MV)")
    p.add_argument("--wordscores", default=None, help="word-score table CSV (MV)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("rescale", help="unit-rescale one column of a merged estimate table")
    p.add_argument("--table", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--rescale", choices=validation.RESCALE_MODES, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rescale)

    p = sub.add_parser("validate", help="concordance of a candidate column against benchmarks")
    p.add_argument("--table", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--benchmarks", required=True, help="comma-separated column names")
    p.add_argument("--rescale", choices=validation.RESCALE_MODES, default="wd")
    p.add_argument("--dimension", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("construct", help="multinomial group-membership fit statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--features", default=None, help="comma-separated feature columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_construct)

    p = sub.add_parser("diagnose", help="vocabulary overlap diagnostics")
    p.add_argument("--ref-matrix", required=True)
    p.add_argument("--virgin-matrix", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("run", help="execute the full scaling grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plotdata", help="emit plot-ready CSV tables from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--cell", default=None)
    p.add_argument("--doc", default=None)
    p.add_argument("--dimension", default=None)
    p.add_argument("--rescale", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (corpus_mod.CorpusError, scaling.ScalingError,
            validation.ValidationError, construct_mod.ConstructError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
