"""Cross-validated grading experiments: folds, systems, ablation, comparison.

Each essay set is evaluated with 5-fold cross validation where every fold
splits the set 60/20/20 into train/dev/test. Six named systems cover the
prompt-specific architectures (with and without co-attention over the source
article, with and without auxiliary gaze losses) and the unseen-prompt
setting (training on a different pool of gaze-annotated essays, optionally
augmented into the target set's own training partition).

Data that could leak evaluation information is guarded by runtime provenance
assertions: the vocabulary must be built only from training essays, and
reader gaze statistics must never include records from dev or test essays of
the fold being run.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import build_vocab, denormalize_score, matrix_from_vectors, text_to_sentences
from .gaze import GAZE_ATTRIBUTES, bin_all, reader_stats
from .metrics import SignificanceResult, paired_t_test, qwk
from .model import EssayScorer, ModelConfig
from .training import TrainConfig, prepare_example, train

SYSTEMS = (
    "self_attention",
    "co_attention",
    "co_attention_gaze",
    "only_prompt",
    "extra_essays",
    "essays_gaze",
)

# Systems whose loss includes the auxiliary gaze terms.
GAZE_SYSTEMS = ("co_attention_gaze", "essays_gaze")

# Systems that train on the target set's partition plus the external pool of
# gaze-annotated essays (unseen-prompt setting).
AUGMENTED_SYSTEMS = ("extra_essays", "essays_gaze")

# Systems that attend over the prompt's source article.
ARTICLE_SYSTEMS = ("co_attention", "co_attention_gaze")

READER_FILTERS = ("all", "native_only")

# Per-attribute auxiliary loss weights used by the fixed-weight systems.
DEFAULT_GAZE_WEIGHTS = {"DT": 0.05, "FFD": 0.05, "IR": 0.01, "RC": 0.01, "Skip": 0.1}

N_FOLDS = 5

FOLD_ROLES = ("train", "dev", "test")


class LeakageError(AssertionError):
    """Evaluation data reached a place where only training data may go."""


@dataclass(frozen=True)
class FoldSpec:
    """One cross-validation fold of a single essay set."""

    fold_id: int
    train: tuple
    dev: tuple
    test: tuple

    def __post_init__(self):
        groups = (self.train, self.dev, self.test)
        seen = set()
        for group in groups:
            for essay_id in group:
                if essay_id in seen:
                    raise ValueError(f"essay {essay_id} appears in two fold roles")
                seen.add(essay_id)
        if not (self.train and self.dev and self.test):
            raise ValueError("every fold role needs at least one essay")

    @property
    def all_ids(self):
        return set(self.train) | set(self.dev) | set(self.test)


def make_folds(essay_ids, seed):
    """Split one set's essay ids into 5 rotated 60/20/20 folds.

    The ids are shuffled once with the given seed and cut into five chunks;
    fold k tests on chunk k, validates on chunk (k+1) mod 5, and trains on
    the remaining three chunks. Needs at least 5 essays.
    """
    ids = list(essay_ids)
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate essay ids")
    if len(ids) < N_FOLDS:
        raise ValueError(f"need at least {N_FOLDS} essays to fold, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    chunks = [list(chunk) for chunk in np.array_split(np.array(shuffled, dtype=object), N_FOLDS)]
    folds = []
    for k in range(N_FOLDS):
        test = chunks[k]
        dev = chunks[(k + 1) % N_FOLDS]
        train = []
        for j in range(N_FOLDS):
            if j != k and j != (k + 1) % N_FOLDS:
                train.extend(chunks[j])
        folds.append(FoldSpec(fold_id=k, train=tuple(train), dev=tuple(dev), test=tuple(test)))
    return folds


def save_folds(path, folds):
    """Write folds as lines of ``fold_id,role,essay_id``."""
    with open(path, "w", encoding="utf-8") as fh:
        for fold in folds:
            for role in FOLD_ROLES:
                for essay_id in getattr(fold, role):
                    fh.write(f"{fold.fold_id},{role},{essay_id}\n")


def load_folds(path):
    """Read folds saved by :func:`save_folds`, preserving stored order."""
    groups = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise ValueError(f"{path}:{line_no}: expected fold_id,role,essay_id")
            fold_id_text, role, essay_id_text = fields
            try:
                fold_id = int(fold_id_text)
                essay_id = int(essay_id_text)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: fold_id and essay_id must be integers")
            if role not in FOLD_ROLES:
                raise ValueError(f"{path}:{line_no}: unknown role {role!r}")
            groups.setdefault(fold_id, {r: [] for r in FOLD_ROLES})[role].append(essay_id)
    folds = []
    for fold_id in sorted(groups):
        roles = groups[fold_id]
        folds.append(FoldSpec(
            fold_id=fold_id,
            train=tuple(roles["train"]),
            dev=tuple(roles["dev"]),
            test=tuple(roles["test"]),
        ))
    if not folds:
        raise ValueError(f"{path}: no folds found")
    return folds


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines one experiment run."""

    system: str
    target_sets: tuple
    seed: int = 0
    gaze_reader_filter: object = "all"
    gaze_attributes: tuple = GAZE_ATTRIBUTES
    gaze_loss_weights: dict = field(default_factory=lambda: dict(DEFAULT_GAZE_WEIGHTS))
    ablate_attribute: str = None
    vocab_size: int = 4000
    model_params: dict = field(default_factory=dict)
    train_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        if not self.target_sets:
            raise ValueError("target_sets must not be empty")
        if isinstance(self.gaze_reader_filter, str):
            if self.gaze_reader_filter not in READER_FILTERS:
                raise ValueError(
                    f"gaze_reader_filter must be one of {READER_FILTERS} "
                    "or an explicit reader id collection")
        else:
            object.__setattr__(self, "gaze_reader_filter", tuple(self.gaze_reader_filter))
        for attribute in self.gaze_attributes:
            if attribute not in GAZE_ATTRIBUTES:
                raise ValueError(f"unknown gaze attribute {attribute!r}")
        if self.uses_gaze:
            missing = [a for a in self.gaze_attributes if a not in self.gaze_loss_weights]
            if missing:
                raise ValueError(f"no loss weight configured for {missing}")
        if self.ablate_attribute is not None:
            if self.ablate_attribute not in self.gaze_attributes:
                raise ValueError(
                    f"cannot ablate {self.ablate_attribute!r}: "
                    f"not among configured attributes {self.gaze_attributes}")
            if not self.uses_gaze:
                raise ValueError(f"system {self.system!r} has no gaze loss to ablate")

    @property
    def uses_gaze(self):
        return self.system in GAZE_SYSTEMS

    @property
    def uses_article(self):
        return self.system in ARTICLE_SYSTEMS

    @property
    def augments_train(self):
        return self.system in AUGMENTED_SYSTEMS

    @property
    def architecture(self):
        return "co_attention" if self.uses_article else "self_attention"

    def effective_gaze_weights(self):
        """Loss weights after applying any ablation (ablated weight is 0)."""
        weights = {a: float(self.gaze_loss_weights[a]) for a in self.gaze_attributes}
        if self.ablate_attribute is not None:
            weights[self.ablate_attribute] = 0.0
        return weights


@dataclass
class ExperimentData:
    """Corpus, folds and gaze material shared by every fold of a run."""

    essays: dict                      # essay_id -> Essay
    sets: dict                        # set_id -> EssaySet
    folds: dict                       # set_id -> [FoldSpec] * 5
    gaze_essay_ids: frozenset = frozenset()   # external gaze-annotated pool
    gaze_records: tuple = ()
    reader_metadata: dict = field(default_factory=dict)  # reader_id -> info dict
    embedding_vectors: dict = None    # token -> vector, or None for random init
    embedding_dim: int = None

    def __post_init__(self):
        for set_id, folds in self.folds.items():
            for fold in folds:
                unknown = fold.all_ids - set(self.essays)
                if unknown:
                    raise ValueError(
                        f"set {set_id} fold {fold.fold_id} references unknown "
                        f"essays {sorted(unknown)}")
        missing = self.gaze_essay_ids - set(self.essays)
        if missing:
            raise ValueError(f"gaze pool references unknown essays {sorted(missing)}")


@dataclass(frozen=True)
class FoldResult:
    """Outcome of training and testing one fold."""

    set_id: int
    fold_id: int
    test_qwk: float
    best_epoch: int
    best_dev_qwk: float
    test_predictions: dict            # essay_id -> (predicted_raw, actual_raw)
    squared_errors: dict              # essay_id -> squared normalized error
    n_train: int
    n_augmented: int


@dataclass(frozen=True)
class ExperimentReport:
    """Per-fold results with recomputable per-set and grand means."""

    system: str
    seed: int
    fold_results: tuple               # FoldResult, ordered by (set_id, fold_id)
    config_echo: dict

    def per_set(self):
        grouped = {}
        for result in self.fold_results:
            grouped.setdefault(result.set_id, []).append(result)
        return grouped

    def set_mean_qwk(self, set_id):
        results = self.per_set()[set_id]
        return sum(r.test_qwk for r in results) / len(results)

    def set_means(self):
        return {set_id: self.set_mean_qwk(set_id) for set_id in sorted(self.per_set())}

    def grand_mean_qwk(self):
        means = self.set_means()
        return sum(means.values()) / len(means)


def _filter_readers(records, reader_filter, reader_metadata):
    if reader_filter == "all":
        return list(records)
    if reader_filter == "native_only":
        native = {rid for rid, info in reader_metadata.items() if info.get("native")}
        if not native:
            raise ValueError("native_only filter needs reader metadata with native readers")
        return [r for r in records if r.reader_id in native]
    allowed = set(reader_filter)
    return [r for r in records if r.reader_id in allowed]


def _article_sentence_ids(essay_set, vocab):
    if essay_set.source_article is None:
        raise ValueError(
            f"set {essay_set.set_id} has no source article but the system attends over one")
    sentences = text_to_sentences(essay_set.source_article)
    return [
        np.array(vocab.encode(sentence), dtype=np.int64) if sentence else
        np.array([], dtype=np.int64)
        for sentence in sentences
    ]


def _assert_no_vocab_leakage(vocab, held_out_ids):
    leaked = vocab.provenance & held_out_ids
    if leaked:
        raise LeakageError(
            f"vocabulary built from held-out essays {sorted(leaked)}")


def _assert_no_stats_leakage(stats, held_out_ids):
    for reader_stat in stats.values():
        leaked = reader_stat.provenance & held_out_ids
        if leaked:
            raise LeakageError(
                f"reader {reader_stat.reader_id} statistics include held-out "
                f"essays {sorted(leaked)}")


def _fold_seed(base_seed, set_id, fold_id):
    # distinct deterministic seed per (set, fold) cell
    return base_seed * 100000 + set_id * 1000 + fold_id


def _examples_for(essay_ids, essays, vocab, gaze_sequences):
    examples = []
    for essay_id in essay_ids:
        essay = essays[essay_id]
        if gaze_sequences is not None:
            per_reader = {
                key[1]: seq for key, seq in gaze_sequences.items() if key[0] == essay_id
            }
            essay = replace(essay, gaze=per_reader if per_reader else None)
        else:
            essay = replace(essay, gaze=None)
        examples.append(prepare_example(essay, vocab))
    return examples


@dataclass
class CellSetup:
    """Everything needed to train and evaluate one (set, fold) cell."""

    model: EssayScorer
    vocab: object
    train_examples: list
    dev_examples: list
    test_examples: list
    train_config: TrainConfig
    essay_set: object
    n_augmented: int
    reader_statistics: dict       # fold-local, train-side only
    usable_records: list          # after reader filter, before held-out cut


def prepare_cell(config, data, set_id, fold):
    """Build the model, vocabulary and examples for one fold, leakage-checked."""
    essay_set = data.sets[set_id]
    held_out = set(fold.dev) | set(fold.test)

    train_ids = list(fold.train)
    augmented_ids = []
    if config.augments_train:
        augmented_ids = sorted(data.gaze_essay_ids - set(train_ids))
        overlap = data.gaze_essay_ids & held_out
        if overlap:
            raise LeakageError(
                f"gaze pool essays {sorted(overlap)} are held out in set {set_id} "
                f"fold {fold.fold_id}")
        train_ids = train_ids + augmented_ids

    train_essays = [data.essays[i] for i in train_ids]
    vocab = build_vocab(train_essays, max_size=config.vocab_size)
    _assert_no_vocab_leakage(vocab, held_out)

    cell_seed = _fold_seed(config.seed, set_id, fold.fold_id)
    rng = np.random.default_rng(cell_seed)

    embedding_matrix = None
    if data.embedding_vectors is not None:
        embedding_matrix, _ = matrix_from_vectors(
            data.embedding_vectors, data.embedding_dim, vocab, rng)

    gaze_sequences = None
    weights = {}
    attributes = ()
    stats = {}
    usable_records = []
    if config.uses_gaze:
        usable_records = _filter_readers(
            data.gaze_records, config.gaze_reader_filter, data.reader_metadata)
        train_side = [r for r in usable_records if r.essay_id not in held_out]
        if not train_side:
            raise ValueError(
                f"system {config.system!r} needs gaze records but none remain "
                f"after filtering")
        stats = reader_stats(train_side)
        _assert_no_stats_leakage(stats, held_out)
        gaze_sequences, _ = bin_all(train_side, stats, data.essays)
        weights = config.effective_gaze_weights()
        attributes = tuple(config.gaze_attributes)

    article_ids = None
    if config.uses_article:
        article_ids = _article_sentence_ids(essay_set, vocab)

    model_kwargs = dict(config.model_params)
    if "vocab_size" in model_kwargs:
        raise ValueError("vocab_size is derived from the fold's training vocabulary")
    model_kwargs["vocab_size"] = len(vocab)
    model_config = ModelConfig(
        architecture=config.architecture,
        gaze_attributes=attributes,
        gaze_loss_weights=weights,
        **model_kwargs,
    )
    model = EssayScorer(
        model_config, np.random.default_rng(cell_seed),
        embedding_matrix=embedding_matrix,
        article_sentence_ids=article_ids,
    )

    train_examples = _examples_for(train_ids, data.essays, vocab, gaze_sequences)
    dev_examples = _examples_for(fold.dev, data.essays, vocab, None)
    test_examples = _examples_for(fold.test, data.essays, vocab, None)

    train_id_set = {ex.essay_id for ex in train_examples}
    leaked = train_id_set & set(fold.test)
    if leaked:
        raise LeakageError(f"test essays {sorted(leaked)} found in training examples")

    train_kwargs = dict(config.train_params)
    train_kwargs["seed"] = cell_seed
    train_config = TrainConfig(**train_kwargs)

    return CellSetup(
        model=model,
        vocab=vocab,
        train_examples=train_examples,
        dev_examples=dev_examples,
        test_examples=test_examples,
        train_config=train_config,
        essay_set=essay_set,
        n_augmented=len(augmented_ids),
        reader_statistics=stats,
        usable_records=usable_records,
    )


def run_fold(config, data, set_id, fold, log=None):
    """Train one cell and score its test partition."""
    cell = prepare_cell(config, data, set_id, fold)
    result = train(cell.model, cell.train_examples, cell.dev_examples,
                   cell.train_config, {set_id: cell.essay_set}, log=log)

    cell.model.load_state_dict(result.best_state)
    pairs = []
    predictions = {}
    squared_errors = {}
    for example in cell.test_examples:
        output = cell.model.forward(example.sentence_ids, training=False)
        predicted = output.score_value
        raw = denormalize_score(predicted, cell.essay_set)
        predictions[example.essay_id] = (raw, example.raw_score)
        squared_errors[example.essay_id] = float((predicted - example.score_target) ** 2)
        pairs.append((int(example.raw_score), raw))
    test_qwk = qwk(pairs, cell.essay_set.score_min, cell.essay_set.score_max)

    return FoldResult(
        set_id=set_id,
        fold_id=fold.fold_id,
        test_qwk=test_qwk,
        best_epoch=result.best_epoch,
        best_dev_qwk=result.best_dev_qwk,
        test_predictions=predictions,
        squared_errors=squared_errors,
        n_train=len(cell.train_examples),
        n_augmented=cell.n_augmented,
    )


def run_experiment(config, data, log=None):
    """Train and evaluate one system over every fold of every target set."""
    validate_run(config, data)

    fold_results = []
    for set_id in sorted(config.target_sets):
        for fold in data.folds[set_id]:
            if log is not None:
                log(f"system={config.system} set={set_id} fold={fold.fold_id}")
            fold_results.append(run_fold(config, data, set_id, fold, log))

    return assemble_report(config, fold_results)


def config_echo(config):
    return {
        "system": config.system,
        "target_sets": tuple(sorted(config.target_sets)),
        "seed": config.seed,
        "gaze_reader_filter": config.gaze_reader_filter,
        "ablate_attribute": config.ablate_attribute,
        "gaze_loss_weights": config.effective_gaze_weights() if config.uses_gaze else {},
    }


def assemble_report(config, fold_results):
    """Build an ExperimentReport from fold results run elsewhere (e.g. workers)."""
    ordered = tuple(sorted(fold_results, key=lambda r: (r.set_id, r.fold_id)))
    return ExperimentReport(
        system=config.system,
        seed=config.seed,
        fold_results=ordered,
        config_echo=config_echo(config),
    )


def validate_run(config, data):
    """All preconditions checked before any training starts."""
    for set_id in config.target_sets:
        if set_id not in data.sets:
            raise ValueError(f"unknown target set {set_id}")
        if set_id not in data.folds:
            raise ValueError(f"no folds for set {set_id}")
        if config.uses_article and data.sets[set_id].source_article is None:
            raise ValueError(
                f"system {config.system!r} needs a source article but set "
                f"{set_id} has none")
    if config.uses_gaze and not data.gaze_records:
        raise ValueError(f"system {config.system!r} needs gaze records")
    if config.augments_train and not data.gaze_essay_ids:
        raise ValueError(f"system {config.system!r} needs a gaze essay pool to augment with")


def run_grid_cell(config, data, attribute, weight, log=None):
    """Train every fold with a single gaze attribute at one loss weight.

    Returns one (dev gaze MSE, dev labeled-token count) pair per fold,
    pooled over target sets. Dev gaze labels are binned with the fold's
    train-side reader statistics; folds whose dev partition carries no
    gaze records contribute a zero count.
    """
    from .training import evaluate_breakdown

    cell_config = replace(
        config,
        gaze_attributes=(attribute,),
        gaze_loss_weights={attribute: float(weight)},
        ablate_attribute=None,
    )
    validate_run(cell_config, data)
    results = []
    for set_id in sorted(cell_config.target_sets):
        for fold in data.folds[set_id]:
            if log is not None:
                log(f"grid attribute={attribute} weight={weight} "
                    f"set={set_id} fold={fold.fold_id}")
            cell = prepare_cell(cell_config, data, set_id, fold)
            result = train(cell.model, cell.train_examples, cell.dev_examples,
                           cell.train_config, {set_id: cell.essay_set}, log=None)
            cell.model.load_state_dict(result.best_state)

            dev_records = [r for r in cell.usable_records if r.essay_id in set(fold.dev)]
            dev_examples = cell.dev_examples
            if dev_records:
                sequences, _ = bin_all(dev_records, cell.reader_statistics, data.essays)
                dev_examples = _examples_for(fold.dev, data.essays, cell.vocab, sequences)
            breakdown = evaluate_breakdown(
                cell.model, dev_examples, {attribute: float(weight)})
            results.append((
                breakdown.gaze_mse.get(attribute, 0.0),
                breakdown.gaze_token_counts.get(attribute, 0),
            ))
    return results


@dataclass(frozen=True)
class AblationReport:
    """Full-system vs single-attribute-disabled comparison."""

    attribute: str
    full: ExperimentReport
    ablated: ExperimentReport

    def delta_per_set(self):
        full_means = self.full.set_means()
        ablated_means = self.ablated.set_means()
        return {set_id: full_means[set_id] - ablated_means[set_id] for set_id in full_means}

    def delta_grand(self):
        return self.full.grand_mean_qwk() - self.ablated.grand_mean_qwk()


def ablate(config, data, attribute, log=None):
    """Measure the QWK contribution of one gaze attribute.

    Runs the configured system twice, once as given and once with the
    attribute's loss weight forced to zero, and reports the QWK drop.
    """
    if not config.uses_gaze:
        raise ValueError(f"system {config.system!r} has no gaze loss to ablate")
    if attribute not in config.gaze_attributes:
        raise ValueError(
            f"cannot ablate {attribute!r}: not among configured attributes "
            f"{config.gaze_attributes}")
    if config.ablate_attribute is not None:
        raise ValueError("config already carries an ablation")
    full = run_experiment(config, data, log=log)
    ablated_config = replace(config, ablate_attribute=attribute)
    ablated = run_experiment(ablated_config, data, log=log)
    return AblationReport(attribute=attribute, full=full, ablated=ablated)


@dataclass(frozen=True)
class ComparisonReport:
    """Paired significance test between two systems on identical folds."""

    system_a: str
    system_b: str
    overall: SignificanceResult
    per_set: dict
    pairing: str = "per-essay squared error on normalized scores, matched by essay id"

    @property
    def significant(self):
        return self.overall.p_value < 0.05


def _matched_errors(report_a, report_b):
    keyed_a = {(r.set_id, r.fold_id): r for r in report_a.fold_results}
    keyed_b = {(r.set_id, r.fold_id): r for r in report_b.fold_results}
    if set(keyed_a) != set(keyed_b):
        raise ValueError("reports cover different sets or folds; cannot pair")
    per_set = {}
    for key in sorted(keyed_a):
        result_a, result_b = keyed_a[key], keyed_b[key]
        if set(result_a.squared_errors) != set(result_b.squared_errors):
            raise ValueError(
                f"set {key[0]} fold {key[1]}: test essays differ between reports; "
                "runs must share fold files")
        set_id = key[0]
        bucket = per_set.setdefault(set_id, ([], []))
        for essay_id in sorted(result_a.squared_errors):
            bucket[0].append(result_a.squared_errors[essay_id])
            bucket[1].append(result_b.squared_errors[essay_id])
    return per_set


def compare(report_a, report_b):
    """Paired t-test of per-essay squared errors between two reports.

    Both reports must have been produced on identical folds; essays are
    matched by id within each (set, fold) cell. Comparing a report against
    itself is rejected (all differences are zero).
    """
    per_set_errors = _matched_errors(report_a, report_b)
    per_set = {}
    all_a, all_b = [], []
    for set_id, (errors_a, errors_b) in sorted(per_set_errors.items()):
        all_a.extend(errors_a)
        all_b.extend(errors_b)
        try:
            per_set[set_id] = paired_t_test(errors_a, errors_b)
        except ValueError:
            per_set[set_id] = None
    overall = paired_t_test(all_a, all_b)
    return ComparisonReport(
        system_a=report_a.system,
        system_b=report_b.system,
        overall=overall,
        per_set=per_set,
    )


def format_report(report):
    """Human-readable results table: per-fold QWKs, set means, grand mean."""
    lines = [f"system: {report.system}    seed: {report.seed}"]
    lines.append(f"{'set':>4} {'fold':>4} {'test_qwk':>9} {'dev_qwk':>9} {'best_epoch':>10}")
    for result in report.fold_results:
        dev = f"{result.best_dev_qwk:9.4f}" if not math.isnan(result.best_dev_qwk) else "      nan"
        lines.append(
            f"{result.set_id:>4} {result.fold_id:>4} {result.test_qwk:9.4f} "
            f"{dev} {result.best_epoch:>10}")
    for set_id, mean in report.set_means().items():
        lines.append(f"set {set_id} mean qwk: {mean:.4f}")
    lines.append(f"grand mean qwk: {report.grand_mean_qwk():.4f}")
    return "\n".join(lines) + "\n"


def report_rows(report):
    """Machine-readable rows (dicts) for delimited output."""
    rows = []
    for result in report.fold_results:
        rows.append({
            "system": report.system,
            "set_id": result.set_id,
            "fold_id": result.fold_id,
            "test_qwk": repr(result.test_qwk),
            "best_dev_qwk": repr(result.best_dev_qwk),
            "best_epoch": result.best_epoch,
            "n_train": result.n_train,
            "n_augmented": result.n_augmented,
        })
    return rows


def write_report_csv(path, report):
    rows = report_rows(report)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
