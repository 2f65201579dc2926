"""Command-line pipeline: preprocess, bin-gaze, train, run, ablate, gridsearch, report.

Every command resolves its options from a flat key-value config file plus
command-line overrides (overrides win), then writes a manifest into the
output directory before producing any other file. The manifest records the
command, the resolved options, the seed, sha256 digests of every input
file, and the package version, so a finished directory is self-describing.
Reruns into a directory that already holds a manifest are refused unless
--force is given.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .checkpoint import save_checkpoint
from .corpus import (
    Essay,
    EssaySet,
    build_vocab,
    load_essays,
    load_set_metadata,
    matrix_from_vectors,
    parse_embedding_file,
)
from .experiments import (
    DEFAULT_GAZE_WEIGHTS,
    ExperimentConfig,
    ExperimentData,
    ExperimentReport,
    FoldResult,
    ablate,
    assemble_report,
    compare,
    format_report,
    load_folds,
    make_folds,
    prepare_cell,
    report_rows,
    run_fold,
    run_grid_cell,
    save_folds,
    validate_run,
    write_report_csv,
)
from .gaze import (
    GAZE_ATTRIBUTES,
    GAZE_CSV_COLUMNS,
    bin_all,
    load_gaze_records,
    load_reader_metadata,
    reader_stats,
)
from .training import GAZE_WEIGHT_GRID, TrainingDiverged, grid_search_gaze_weights, train

DATA_DIR_ENV = "GAZESCORE_DATA"

MANIFEST_NAME = "manifest.json"

CORPUS_CACHE_FORMAT = "gazescore-corpus 1"

# config keys naming input files, resolved against $GAZESCORE_DATA when relative
PATH_KEYS = (
    "essays", "set_metadata", "embeddings", "gaze_csv", "reader_metadata",
    "corpus_cache", "records_clean", "embeddings_cache", "folds_dir",
    "run_a", "run_b",
)

MODEL_KEYS = {
    "embedding_dim": int,
    "conv_kernel": int,
    "conv_filters": int,
    "lstm_hidden": int,
    "modeling_hidden": int,
    "dropout": float,
}

TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "momentum": float,
    "clip_norm": float,
}


class CliError(Exception):
    """Expected failure reported to stderr with a nonzero exit."""


# ------------------------------------------------------------ options

def parse_config_file(path):
    """Flat ``key = value`` lines; # comments and blank lines ignored."""
    options = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise CliError(f"{path}:{line_no}: expected key = value")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if not key:
                raise CliError(f"{path}:{line_no}: empty key")
            options[key] = value.strip()
    return options


def resolve_options(args):
    """Config file options overlaid with --set pairs; overrides win."""
    options = {}
    if args.config:
        options.update(parse_config_file(args.config))
    overrides = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise CliError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    options.update(overrides)
    return options, overrides


def resolve_seed(args, options):
    if args.seed is not None:
        return args.seed
    if "seed" in options:
        return opt_int(options, "seed", 0)
    return 0


def resolve_path(value):
    """Relative paths resolve under $GAZESCORE_DATA when it is set."""
    path = Path(value)
    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir and not path.is_absolute():
        return Path(data_dir) / path
    return path


def opt_path(options, key, required=False):
    value = options.get(key)
    if value is None or value == "":
        if required:
            raise CliError(f"missing required option {key!r}")
        return None
    return resolve_path(value)


def opt_int(options, key, default):
    value = options.get(key)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise CliError(f"option {key!r} must be an integer, got {value!r}")


def opt_float(options, key, default):
    value = options.get(key)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        raise CliError(f"option {key!r} must be a number, got {value!r}")


def opt_list(options, key, default=()):
    value = options.get(key)
    if value is None or value == "":
        return tuple(default)
    return tuple(field.strip() for field in value.split(",") if field.strip())


def opt_int_list(options, key, default=()):
    try:
        return tuple(int(v) for v in opt_list(options, key, default))
    except ValueError:
        raise CliError(f"option {key!r} must be comma-separated integers")


def typed_params(options, table):
    params = {}
    for key, cast in table.items():
        if key in options:
            try:
                params[key] = cast(options[key])
            except ValueError:
                raise CliError(f"option {key!r} must be {cast.__name__}")
    return params


def check_input_file(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"cannot read input file: {path}")
    if path.stat().st_size == 0:
        raise CliError(f"empty input file: {path}")


# ----------------------------------------------------------- manifest

def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return "sha256:" + digest.hexdigest()


def digest_inputs(paths):
    digests = {}
    for path in paths:
        if path is None:
            continue
        path = Path(path)
        if path.is_file():
            digests[str(path)] = sha256_file(path)
        elif path.is_dir():
            for child in sorted(path.iterdir()):
                if child.is_file():
                    digests[str(child)] = sha256_file(child)
    return digests


def start_run(args, command, options, overrides, seed, input_paths):
    """Create the output directory and write manifest + resolved config.

    The manifest always lands before any command output; a directory that
    already holds one is refused unless --force was given.
    """
    out_dir = Path(args.out)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not args.force:
        raise CliError(
            f"output directory {out_dir} already contains a run "
            f"(found {MANIFEST_NAME}); pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_file": str(args.config) if args.config else None,
        "resolved_options": {k: options[k] for k in sorted(options)},
        "overrides": {k: overrides[k] for k in sorted(overrides)},
        "seed": seed,
        "jobs": args.jobs,
        "dry_run": bool(args.dry_run),
        "input_digests": digest_inputs(input_paths),
        "out_dir": str(out_dir),
        "data_dir_env": os.environ.get(DATA_DIR_ENV),
        "version": __version__,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "resolved.cfg", "w", encoding="utf-8") as fh:
        fh.write(f"seed = {seed}\n")
        for key in sorted(options):
            if key != "seed":
                fh.write(f"{key} = {options[key]}\n")
    return out_dir


# ------------------------------------------------------- corpus cache

def write_corpus_cache(path, essays, sets):
    payload = {
        "format": CORPUS_CACHE_FORMAT,
        "sets": {
            str(set_id): {
                "score_min": essay_set.score_min,
                "score_max": essay_set.score_max,
                "article": essay_set.source_article,
            }
            for set_id, essay_set in sets.items()
        },
        "essays": [
            {
                "essay_id": essay.essay_id,
                "set_id": essay.set_id,
                "raw_score": essay.raw_score,
                "normalized_score": essay.normalized_score,
                "degenerate": essay.degenerate,
                "sentences": essay.sentences,
            }
            for essay in essays
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_corpus_cache(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CORPUS_CACHE_FORMAT:
        raise CliError(f"{path}: not a corpus cache (format {payload.get('format')!r})")
    sets = {
        int(set_id): EssaySet(
            set_id=int(set_id),
            score_min=entry["score_min"],
            score_max=entry["score_max"],
            source_article=entry["article"],
        )
        for set_id, entry in payload["sets"].items()
    }
    essays = {}
    for entry in payload["essays"]:
        essay = Essay(
            essay_id=entry["essay_id"],
            set_id=entry["set_id"],
            sentences=entry["sentences"],
            raw_score=entry["raw_score"],
            normalized_score=entry["normalized_score"],
            degenerate=entry["degenerate"],
        )
        essays[essay.essay_id] = essay
    return essays, sets


# ----------------------------------------------------------- commands

def cmd_preprocess(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    essays_path = opt_path(options, "essays", required=True)
    metadata_path = opt_path(options, "set_metadata", required=True)
    embeddings_path = opt_path(options, "embeddings")
    for path in (essays_path, metadata_path, embeddings_path):
        if path is not None:
            check_input_file(path)

    out_dir = start_run(args, "preprocess", options, overrides, seed,
                        [essays_path, metadata_path, embeddings_path])
    if args.dry_run:
        return 0

    sets = load_set_metadata(metadata_path)
    essays, report = load_essays(essays_path, sets)
    if not essays:
        raise CliError(f"no essays loaded from {essays_path}")

    write_corpus_cache(out_dir / "corpus_cache.json", essays, sets)

    vocab = build_vocab(essays, max_size=opt_int(options, "vocab_size", 4000))
    index_to_token = sorted(vocab.token_to_index, key=vocab.token_to_index.get)
    with open(out_dir / "vocab.txt", "w", encoding="utf-8") as fh:
        for index, token in enumerate(index_to_token):
            fh.write(f"{index}\t{token}\n")

    coverage_line = "embedding coverage: not computed (no embeddings given)"
    if embeddings_path is not None:
        corpus_tokens = {t for e in essays for t in e.tokens}
        vectors, dimension = parse_embedding_file(
            embeddings_path, restrict_tokens=corpus_tokens)
        if dimension is None:
            raise CliError(f"no embedding vectors found in {embeddings_path}")
        with open(out_dir / "embeddings_cache.txt", "w", encoding="utf-8") as fh:
            for token in sorted(vectors):
                values = " ".join(f"{v:.17g}" for v in vectors[token])
                fh.write(f"{token} {values}\n")
        real = [t for t in vocab.token_to_index if vocab.token_to_index[t] >= 2]
        matched = sum(1 for t in real if t in vectors)
        coverage = matched / len(real) if real else 0.0
        coverage_line = (
            f"embedding coverage: {matched}/{len(real)} vocab tokens "
            f"({coverage:.4f}), dimension {dimension}")

    lines = []
    for set_id in sorted(report.per_set_counts):
        lines.append(f"set {set_id}: {report.per_set_counts[set_id]} essays")
    lines.append(f"total essays: {len(essays)}")
    lines.append(f"rejected rows: {len(report.rejected)}")
    lines.append(f"vocabulary size: {len(vocab)}")
    lines.append(coverage_line)
    with open(out_dir / "preprocess_report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        for line_no, reason in report.rejected:
            fh.write(f"rejected line {line_no}: {reason}\n")
    print("\n".join(lines))
    return 0


def _write_records_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GAZE_CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.essay_id, r.reader_id, r.ia_index, r.token,
                repr(r.dwell_time_ms), repr(r.first_fixation_ms),
                r.is_regression, r.run_count, r.skip,
            ])


def cmd_bin_gaze(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    gaze_path = opt_path(options, "gaze_csv", required=True)
    cache_path = opt_path(options, "corpus_cache", required=True)
    reader_path = opt_path(options, "reader_metadata")
    if not Path(gaze_path).is_file():
        raise CliError(f"cannot read input file: {gaze_path}")
    check_input_file(cache_path)
    if reader_path is not None:
        check_input_file(reader_path)

    out_dir = start_run(args, "bin-gaze", options, overrides, seed,
                        [gaze_path, cache_path, reader_path])
    if args.dry_run:
        return 0

    essays, _ = load_corpus_cache(cache_path)
    reader_filter = options.get("reader_filter", "all")
    metadata = load_reader_metadata(reader_path) if reader_path else {}

    if Path(gaze_path).stat().st_size == 0:
        records, rejected, total_rows = [], [], 0
    else:
        records, load_report = load_gaze_records(gaze_path)
        rejected = list(load_report.rejected)
        total_rows = load_report.total_rows

    if reader_filter == "native_only":
        native = {rid for rid, info in metadata.items() if info.get("native")}
        if not native:
            raise CliError("reader_filter native_only needs reader metadata "
                           "with at least one native reader")
        records = [r for r in records if r.reader_id in native]
    elif reader_filter != "all":
        allowed = {rid.strip() for rid in reader_filter.split(",") if rid.strip()}
        records = [r for r in records if r.reader_id in allowed]

    diagnostics = []
    sequences = {}
    stats = {}
    if records:
        stats = reader_stats(records)
        sequences, diagnostics = bin_all(records, stats, essays)

    placed = sum(
        sum(1 for binned in sequence if binned is not None)
        for sequence in sequences.values())

    _write_records_csv(out_dir / "records_clean.csv", records)
    with open(out_dir / "binned_labels.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["essay_id", "reader_id", "ia_index",
                         "dt_bin", "ffd_bin", "ir_bin", "rc_bin", "skip_bin"])
        for (essay_id, reader_id) in sorted(sequences):
            sequence = sequences[(essay_id, reader_id)]
            for position, binned in enumerate(sequence):
                if binned is None:
                    continue
                writer.writerow([essay_id, reader_id, position, binned.dt_bin,
                                 binned.ffd_bin, binned.ir_bin, binned.rc_bin,
                                 binned.skip_bin])
    with open(out_dir / "reader_stats.txt", "w", encoding="utf-8") as fh:
        fh.write("reader_id dt_mean dt_std ffd_mean ffd_std n_records\n")
        for reader_id in sorted(stats):
            s = stats[reader_id]
            fh.write(f"{reader_id} {s.dt_mean:.17g} {s.dt_std:.17g} "
                     f"{s.ffd_mean:.17g} {s.ffd_std:.17g} {s.n_records}\n")
    with open(out_dir / "alignment_errors.log", "w", encoding="utf-8") as fh:
        for line_no, reason in rejected:
            fh.write(f"line {line_no}: {reason}\n")
        for reason in diagnostics:
            fh.write(f"{reason}\n")

    summary = (f"rows: {total_rows}, kept records: {len(records)}, "
               f"binned tokens: {placed}, readers: {len(stats)}")
    print(summary)
    if total_rows == 0:
        print(f"warning: no gaze rows in {gaze_path}", file=sys.stderr)
        return 0
    failures = len(rejected) + len(diagnostics)
    if placed == 0 and failures >= total_rows:
        print(f"error: all {total_rows} gaze rows failed; see "
              f"{out_dir / 'alignment_errors.log'}", file=sys.stderr)
        return 1
    return 0


def _build_experiment_inputs(args, options, overrides, seed, command,
                             require_system=True):
    """Shared setup for run/train/ablate/gridsearch: data + config + out dir."""
    cache_path = opt_path(options, "corpus_cache", required=True)
    records_path = opt_path(options, "records_clean")
    embeddings_path = opt_path(options, "embeddings_cache")
    reader_path = opt_path(options, "reader_metadata")
    folds_dir = opt_path(options, "folds_dir")
    check_input_file(cache_path)
    for path in (records_path, embeddings_path, reader_path):
        if path is not None:
            check_input_file(path)

    out_dir = start_run(args, command, options, overrides, seed,
                        [cache_path, records_path, embeddings_path,
                         reader_path, folds_dir])
    if args.dry_run:
        return out_dir, None, None

    essays, sets = load_corpus_cache(cache_path)

    records = ()
    if records_path is not None:
        records, _ = load_gaze_records(records_path)
        records = tuple(records)
    metadata = load_reader_metadata(reader_path) if reader_path else {}

    vectors = None
    dimension = None
    if embeddings_path is not None:
        vectors, dimension = parse_embedding_file(embeddings_path)
        if dimension is None:
            raise CliError(f"no embedding vectors found in {embeddings_path}")

    system = options.get("system")
    if require_system and not system:
        raise CliError("missing required option 'system'")
    target_sets = opt_int_list(options, "target_sets")
    if not target_sets and "set" in options:
        target_sets = (opt_int(options, "set", 0),)
    if not target_sets:
        raise CliError("missing required option 'target_sets'")

    folds = {}
    generated = False
    for set_id in target_sets:
        if set_id not in sets:
            raise CliError(f"unknown target set {set_id}")
        if folds_dir is not None:
            fold_file = Path(folds_dir) / f"set_{set_id}.txt"
            if not fold_file.is_file():
                raise CliError(f"cannot read fold file: {fold_file}")
            folds[set_id] = load_folds(fold_file)
        else:
            set_ids = sorted(e.essay_id for e in essays.values() if e.set_id == set_id)
            folds[set_id] = make_folds(set_ids, seed=seed)
            generated = True
    if generated:
        fold_out = out_dir / "folds"
        fold_out.mkdir(exist_ok=True)
        for set_id, fold_list in folds.items():
            save_folds(fold_out / f"set_{set_id}.txt", fold_list)

    gaze_ids = frozenset(opt_int_list(options, "gaze_essay_ids"))
    if not gaze_ids and records:
        gaze_ids = frozenset(r.essay_id for r in records)

    data = ExperimentData(
        essays=essays,
        sets=sets,
        folds=folds,
        gaze_essay_ids=gaze_ids,
        gaze_records=records,
        reader_metadata=metadata,
        embedding_vectors=vectors,
        embedding_dim=dimension,
    )

    attributes = opt_list(options, "gaze_attributes", GAZE_ATTRIBUTES)
    weights = {}
    for attribute in attributes:
        weights[attribute] = opt_float(
            options, f"gaze_weight_{attribute}", DEFAULT_GAZE_WEIGHTS.get(attribute, 0.0))
    reader_filter = options.get("reader_filter", "all")
    if reader_filter not in ("all", "native_only"):
        reader_filter = tuple(
            rid.strip() for rid in reader_filter.split(",") if rid.strip())

    config = ExperimentConfig(
        system=system or "self_attention",
        target_sets=target_sets,
        seed=seed,
        gaze_reader_filter=reader_filter,
        gaze_attributes=attributes,
        gaze_loss_weights=weights,
        vocab_size=opt_int(options, "vocab_size", 4000),
        model_params=typed_params(options, MODEL_KEYS),
        train_params=typed_params(options, TRAIN_KEYS),
    )
    return out_dir, config, data


def _write_predictions_csv(path, report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set_id", "fold_id", "essay_id",
                         "predicted_raw", "actual_raw", "squared_error"])
        for result in report.fold_results:
            for essay_id in sorted(result.test_predictions):
                predicted, actual = result.test_predictions[essay_id]
                writer.writerow([result.set_id, result.fold_id, essay_id,
                                 predicted, actual,
                                 repr(result.squared_errors[essay_id])])


def _write_report_files(out_dir, report, prefix=""):
    with open(out_dir / f"{prefix}report.txt", "w", encoding="utf-8") as fh:
        fh.write(format_report(report))
    write_report_csv(out_dir / f"{prefix}report.csv", report)
    _write_predictions_csv(out_dir / f"{prefix}predictions.csv", report)


def _execute_report(config, data, jobs, log=None):
    """Run every (set, fold) cell, in-process or fanned out to workers.

    Returns (report or None, failures); failures are (set_id, fold_id,
    message) triples and never abort the remaining cells.
    """
    validate_run(config, data)
    cells = [(set_id, fold)
             for set_id in sorted(config.target_sets)
             for fold in data.folds[set_id]]
    results = []
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(run_fold, config, data, set_id, fold): (set_id, fold)
                for set_id, fold in cells
            }
            for future, (set_id, fold) in futures.items():
                try:
                    results.append(future.result())
                except Exception as error:
                    failures.append((set_id, fold.fold_id, str(error)))
    else:
        for set_id, fold in cells:
            if log is not None:
                log(f"system={config.system} set={set_id} fold={fold.fold_id}")
            try:
                results.append(run_fold(config, data, set_id, fold, log=log))
            except Exception as error:
                failures.append((set_id, fold.fold_id, str(error)))
    report = assemble_report(config, results) if results else None
    return report, failures


def _report_failures(out_dir, failures):
    with open(out_dir / "failures.txt", "w", encoding="utf-8") as fh:
        for set_id, fold_id, message in failures:
            fh.write(f"set={set_id} fold={fold_id}: {message}\n")
    for set_id, fold_id, message in failures:
        print(f"failed: set={set_id} fold={fold_id}: {message}", file=sys.stderr)


def cmd_run(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    out_dir, config, data = _build_experiment_inputs(
        args, options, overrides, seed, "run")
    if args.dry_run:
        return 0
    report, failures = _execute_report(config, data, args.jobs, log=print)
    if report is not None:
        _write_report_files(out_dir, report)
        print(format_report(report), end="")
    if failures:
        _report_failures(out_dir, failures)
        return 1
    return 0


def cmd_train(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    out_dir, config, data = _build_experiment_inputs(
        args, options, overrides, seed, "train", require_system=False)
    if args.dry_run:
        return 0
    if len(config.target_sets) != 1:
        raise CliError("train works on a single set; give set=<id>")
    set_id = config.target_sets[0]
    fold_index = opt_int(options, "fold", 0)
    fold_list = data.folds[set_id]
    if not 0 <= fold_index < len(fold_list):
        raise CliError(f"fold {fold_index} out of range; set {set_id} has "
                       f"{len(fold_list)} folds")
    fold = fold_list[fold_index]

    cell = prepare_cell(config, data, set_id, fold)
    history_lines = []

    def log(line):
        history_lines.append(line)
        print(line)

    result = train(cell.model, cell.train_examples, cell.dev_examples,
                   cell.train_config, {set_id: cell.essay_set}, log=log)

    save_checkpoint(out_dir / "checkpoint_best.txt", result.best_state)
    save_checkpoint(out_dir / "checkpoint_final.txt", result.final_state)
    with open(out_dir / "history.log", "w", encoding="utf-8") as fh:
        for line in history_lines:
            fh.write(line + "\n")
    summary = (f"best_epoch={result.best_epoch} "
               f"best_dev_qwk={result.best_dev_qwk:.6g} "
               f"epochs={len(result.history)}")
    with open(out_dir / "train_summary.txt", "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return 0


def cmd_ablate(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    out_dir, config, data = _build_experiment_inputs(
        args, options, overrides, seed, "ablate")
    if args.dry_run:
        return 0
    attribute = options.get("attribute")
    if not attribute:
        raise CliError("missing required option 'attribute'")
    result = ablate(config, data, attribute, log=print)
    _write_report_files(out_dir, result.full, prefix="full_")
    _write_report_files(out_dir, result.ablated, prefix="ablated_")
    lines = [f"ablated attribute: {attribute}"]
    for set_id, delta in sorted(result.delta_per_set().items()):
        lines.append(f"set {set_id} delta qwk: {delta:.6g}")
    lines.append(f"grand delta qwk: {result.delta_grand():.6g}")
    lines.append(f"full grand mean qwk: {result.full.grand_mean_qwk():.6g}")
    lines.append(f"ablated grand mean qwk: {result.ablated.grand_mean_qwk():.6g}")
    text = "\n".join(lines) + "\n"
    with open(out_dir / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_gridsearch(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    out_dir, config, data = _build_experiment_inputs(
        args, options, overrides, seed, "gridsearch")
    if args.dry_run:
        return 0
    if not config.uses_gaze:
        raise CliError(f"system {config.system!r} has no gaze loss to search over")
    grid = tuple(float(w) for w in opt_list(options, "grid", GAZE_WEIGHT_GRID))
    attributes = config.gaze_attributes

    if args.jobs > 1:
        cells = [(a, w) for a in attributes for w in sorted(set(grid))]
        computed = {}
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(run_grid_cell, config, data, a, w): (a, w)
                for a, w in cells
            }
            for future, key in futures.items():
                computed[key] = future.result()

        def run_cell(attribute, weight):
            return computed[(attribute, weight)]
    else:
        def run_cell(attribute, weight):
            return run_grid_cell(config, data, attribute, weight, log=print)

    best, table = grid_search_gaze_weights(run_cell, grid, attributes)

    lines = []
    for attribute in attributes:
        for weight in sorted(table[attribute]):
            marker = " *" if weight == best[attribute] else ""
            lines.append(f"{attribute} weight={weight:g} "
                         f"dev_gaze_mse={table[attribute][weight]:.6g}{marker}")
        lines.append(f"best {attribute}: {best[attribute]:g}")
    text = "\n".join(lines) + "\n"
    with open(out_dir / "gridsearch.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(out_dir / "gridsearch.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute", "weight", "dev_gaze_mse", "best"])
        for attribute in attributes:
            for weight in sorted(table[attribute]):
                writer.writerow([attribute, repr(weight),
                                 repr(table[attribute][weight]),
                                 int(weight == best[attribute])])
    print(text, end="")
    return 0


def load_run_directory(run_dir):
    """Rebuild an ExperimentReport from a run directory's csv files."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.csv"
    predictions_path = run_dir / "predictions.csv"
    for path in (report_path, predictions_path):
        if not path.is_file():
            raise CliError(f"cannot read run file: {path}")
    predictions = {}
    errors = {}
    with open(predictions_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["set_id"]), int(row["fold_id"]))
            essay_id = int(row["essay_id"])
            predictions.setdefault(key, {})[essay_id] = (
                int(row["predicted_raw"]), int(row["actual_raw"]))
            errors.setdefault(key, {})[essay_id] = float(row["squared_error"])
    results = []
    system = None
    with open(report_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            system = row["system"]
            key = (int(row["set_id"]), int(row["fold_id"]))
            results.append(FoldResult(
                set_id=key[0],
                fold_id=key[1],
                test_qwk=float(row["test_qwk"]),
                best_epoch=int(row["best_epoch"]),
                best_dev_qwk=float(row["best_dev_qwk"]),
                test_predictions=predictions.get(key, {}),
                squared_errors=errors.get(key, {}),
                n_train=int(row["n_train"]),
                n_augmented=int(row["n_augmented"]),
            ))
    if not results:
        raise CliError(f"no fold results in {report_path}")
    return ExperimentReport(system=system, seed=0,
                            fold_results=tuple(sorted(results, key=lambda r: (r.set_id, r.fold_id))),
                            config_echo={})


def cmd_report(args):
    options, overrides = resolve_options(args)
    seed = resolve_seed(args, options)
    run_a = opt_path(options, "run_a", required=True)
    run_b = opt_path(options, "run_b")
    out_dir = start_run(args, "report", options, overrides, seed, [run_a, run_b])
    if args.dry_run:
        return 0
    report_a = load_run_directory(run_a)
    if run_b is None:
        text = format_report(report_a)
        with open(out_dir / "rendered_report.txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        print(text, end="")
        return 0
    report_b = load_run_directory(run_b)
    comparison = compare(report_a, report_b)
    lines = [
        f"comparing {comparison.system_a} vs {comparison.system_b}",
        f"pairing: {comparison.pairing}",
        f"overall: t={comparison.overall.t_statistic:.6g} "
        f"p={comparison.overall.p_value:.6g} n={comparison.overall.n_pairs}",
        f"significant at 0.05: {'yes' if comparison.significant else 'no'}",
    ]
    for set_id, result in sorted(comparison.per_set.items()):
        if result is None:
            lines.append(f"set {set_id}: not testable (zero variance)")
        else:
            lines.append(f"set {set_id}: t={result.t_statistic:.6g} "
                         f"p={result.p_value:.6g} n={result.n_pairs}")
    text = "\n".join(lines) + "\n"
    with open(out_dir / "comparison.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


# --------------------------------------------------------------- main

def build_parser():
    parser = argparse.ArgumentParser(
        prog="gazescore",
        description="Essay grading pipeline with auxiliary gaze-behaviour losses.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "preprocess": (cmd_preprocess, "Tokenize essays into a corpus cache"),
        "bin-gaze": (cmd_bin_gaze, "Validate and bin raw gaze records"),
        "train": (cmd_train, "Train one fold and save checkpoints"),
        "run": (cmd_run, "Run a full cross-validated experiment"),
        "ablate": (cmd_ablate, "Measure one gaze attribute's contribution"),
        "gridsearch": (cmd_gridsearch, "Select gaze loss weights on dev data"),
        "report": (cmd_report, "Render a saved run or compare two runs"),
    }
    for name, (handler, help_text) in handlers.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None, help="flat key=value config file")
        sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config option (repeatable)")
        sub.add_argument("--seed", type=int, default=None,
                         help="master seed (overrides config)")
        sub.add_argument("--out", required=True, help="output directory")
        sub.add_argument("--jobs", type=int, default=1,
                         help="parallel fold/grid workers")
        sub.add_argument("--dry-run", action="store_true",
                         help="write manifest and resolved config, do no work")
        sub.add_argument("--force", action="store_true",
                         help="allow rerunning into an existing output directory")
        sub.set_defaults(handler=handler)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except CliError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    except (ValueError, OSError, TrainingDiverged) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
