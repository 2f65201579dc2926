"""Essay ingestion: parsing, tokenization, vocabulary, scores, embeddings.

Essays arrive as a tab-separated file with columns (essay_id, essay_set,
essay, domain1_score). Score ranges per set come from a flat key-value
metadata file. Tokenization lowercases and detaches punctuation into
separate tokens; placeholder tokens like @name1 survive as single tokens.
Sentences split on terminal punctuation followed by whitespace.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

# sequence caps keep convolution and recurrence shapes bounded
MAX_TOKENS_PER_SENTENCE = 50
MAX_SENTENCES_PER_ESSAY = 60

# canonical resolved-score ranges for the eight ASAP prompts
ASAP_SCORE_RANGES = {
    1: (2, 12),
    2: (1, 6),
    3: (0, 3),
    4: (0, 3),
    5: (0, 4),
    6: (0, 4),
    7: (0, 30),
    8: (0, 60),
}

_TOKEN_RE = re.compile(r"@\w+|\w+|[^\w\s]")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class EssaySet:
    set_id: int
    score_min: int
    score_max: int
    source_article: str | None = None

    def __post_init__(self):
        if self.score_min >= self.score_max:
            raise ValueError(
                f"set {self.set_id}: score_min {self.score_min} must be below "
                f"score_max {self.score_max}")

    @property
    def is_source_dependent(self):
        return self.source_article is not None


@dataclass
class Essay:
    essay_id: int
    set_id: int
    sentences: list
    raw_score: int
    normalized_score: float
    degenerate: bool = False
    gaze: dict | None = None  # reader_id -> per-token binned gaze, attached later

    @property
    def tokens(self):
        return [t for sentence in self.sentences for t in sentence]


@dataclass
class LoadReport:
    per_set_counts: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)  # (line_number, reason)
    total_rows: int = 0

    @property
    def n_loaded(self):
        return sum(self.per_set_counts.values())


def tokenize(text):
    """Lowercase word/punctuation tokens; @placeholders stay whole."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text):
    """Split on '.', '!' or '?' followed by whitespace; never returns []."""
    stripped = text.strip()
    if not stripped:
        return [""]
    parts = [p for p in _SENTENCE_RE.split(stripped) if p.strip()]
    return parts if parts else [stripped]


def text_to_sentences(text):
    """Tokenized, capped sentence structure for one essay text."""
    sentences = []
    for raw in split_sentences(text)[:MAX_SENTENCES_PER_ESSAY]:
        sentences.append(tokenize(raw)[:MAX_TOKENS_PER_SENTENCE])
    return sentences


def normalize_score(raw, essay_set):
    """Map an in-range integer score to [0, 1]."""
    if not essay_set.score_min <= raw <= essay_set.score_max:
        raise ValueError(
            f"score {raw} outside range [{essay_set.score_min}, {essay_set.score_max}] "
            f"of set {essay_set.set_id}")
    span = essay_set.score_max - essay_set.score_min
    return (raw - essay_set.score_min) / span


def denormalize_score(pred, essay_set):
    """Map a [0, 1] prediction back to an integer score, half away from zero."""
    if not 0.0 <= pred <= 1.0:
        raise ValueError(f"prediction {pred} outside [0, 1]")
    value = pred * (essay_set.score_max - essay_set.score_min) + essay_set.score_min
    rounded = int(math.copysign(math.floor(abs(value) + 0.5), value))
    return min(max(rounded, essay_set.score_min), essay_set.score_max)


def load_set_metadata(path):
    """Parse the flat key-value set metadata file into {set_id: EssaySet}.

    Recognized keys: set<id>.score_min, set<id>.score_max, set<id>.article
    (path to the source-article text, relative to the metadata file).
    Lines starting with '#' and blank lines are ignored.
    """
    import os

    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(None, 1)
            if len(fields) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'key value', got {line!r}")
            key, value = fields
            m = re.fullmatch(r"set(\d+)\.(score_min|score_max|article)", key)
            if not m:
                raise ValueError(f"{path}:{line_no}: unrecognized key {key!r}")
            set_id, prop = int(m.group(1)), m.group(2)
            raw.setdefault(set_id, {})[prop] = value

    base = os.path.dirname(os.path.abspath(path))
    sets = {}
    for set_id, props in sorted(raw.items()):
        for required in ("score_min", "score_max"):
            if required not in props:
                raise ValueError(f"{path}: set {set_id} missing {required}")
        article = None
        if "article" in props:
            article_path = os.path.join(base, props["article"])
            with open(article_path, "r", encoding="utf-8") as fh:
                article = fh.read()
        sets[set_id] = EssaySet(
            set_id=set_id,
            score_min=int(props["score_min"]),
            score_max=int(props["score_max"]),
            source_article=article,
        )
    return sets


def load_essays(path, sets, has_header=None):
    """Parse the essay TSV into (list of Essay, LoadReport).

    ``has_header``: True/False, or None to sniff a leading header row.
    Malformed rows and out-of-range scores are rejected with per-record
    diagnostics in the report rather than aborting the load.
    """
    essays = []
    report = LoadReport(per_set_counts={sid: 0 for sid in sets})
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines and has_header is None:
        has_header = lines[0].split("\t")[0].strip().lower() == "essay_id"
    if lines and has_header:
        start = 1
    for line_no, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        report.total_rows += 1
        columns = line.split("\t")
        if len(columns) < 4:
            report.rejected.append((line_no, f"expected 4 tab-separated columns, got {len(columns)}"))
            continue
        try:
            essay_id = int(columns[0])
            set_id = int(columns[1])
            text = columns[2]
            raw_score = int(columns[3])
        except ValueError as exc:
            report.rejected.append((line_no, f"malformed field: {exc}"))
            continue
        if set_id not in sets:
            report.rejected.append((line_no, f"unknown essay set {set_id}"))
            continue
        essay_set = sets[set_id]
        if not essay_set.score_min <= raw_score <= essay_set.score_max:
            report.rejected.append((
                line_no,
                f"essay {essay_id}: score {raw_score} outside set {set_id} range "
                f"[{essay_set.score_min}, {essay_set.score_max}]"))
            continue
        sentences = text_to_sentences(text)
        degenerate = all(len(s) == 0 for s in sentences)
        essays.append(Essay(
            essay_id=essay_id,
            set_id=set_id,
            sentences=sentences,
            raw_score=raw_score,
            normalized_score=normalize_score(raw_score, essay_set),
            degenerate=degenerate,
        ))
        report.per_set_counts[set_id] += 1
    return essays, report


class Vocabulary:
    """Frequency-ranked token table with reserved PAD and UNK slots.

    ``provenance`` records which essay ids contributed tokens, so later
    stages can assert that no test-partition essay leaked into the build.
    """

    def __init__(self, token_to_index, max_size, provenance=frozenset()):
        self.token_to_index = dict(token_to_index)
        self.max_size = max_size
        self.provenance = frozenset(provenance)

    def __len__(self):
        return len(self.token_to_index)

    def index(self, token):
        return self.token_to_index.get(token, UNK_INDEX)

    def encode(self, tokens):
        return [self.index(t) for t in tokens]

    @property
    def tokens(self):
        return list(self.token_to_index)


def build_vocab(train_essays, max_size=4000):
    """Top-``max_size`` tokens by frequency; ties keep first-occurrence order."""
    train_essays = list(train_essays)
    if not train_essays:
        raise ValueError("build_vocab: training set is empty")
    counts = {}
    first_seen = {}
    position = 0
    for essay in train_essays:
        for token in essay.tokens:
            if token not in counts:
                counts[token] = 0
                first_seen[token] = position
                position += 1
            counts[token] += 1
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))[:max_size]
    token_to_index = {PAD_TOKEN: PAD_INDEX, UNK_TOKEN: UNK_INDEX}
    for token in ranked:
        token_to_index[token] = len(token_to_index)
    return Vocabulary(
        token_to_index,
        max_size=max_size,
        provenance=frozenset(e.essay_id for e in train_essays),
    )


@dataclass
class EmbeddingTable:
    dimension: int
    matrix: np.ndarray  # (len(vocab), dimension)
    coverage: float


def parse_embedding_file(path, restrict_tokens=None):
    """Stream a word-vector file into ({token: vector}, dimension).

    ``restrict_tokens``, when given, keeps only those tokens (bounds memory
    when the file is much larger than the corpus vocabulary). Dimension is
    taken from the first line; later lines must agree.
    """
    vectors = {}
    dimension = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            token, values = fields[0], fields[1:]
            if dimension is None:
                dimension = len(values)
                if dimension == 0:
                    raise ValueError(f"{path}:{line_no}: no embedding values on line")
            elif len(values) != dimension:
                raise ValueError(
                    f"{path}:{line_no}: expected {dimension} values, got {len(values)}")
            if restrict_tokens is None or token in restrict_tokens:
                vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
    return vectors, dimension


def matrix_from_vectors(vectors, dimension, vocab, rng):
    """Embedding matrix for ``vocab``; absent tokens get seeded uniform rows.

    The PAD row is all zeros. Returns (matrix, coverage) where coverage
    counts only real tokens (PAD and UNK excluded from the denominator).
    """
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dimension))
    matrix[PAD_INDEX] = 0.0
    matched = 0
    for token, index in vocab.token_to_index.items():
        if token in vectors:
            vector = np.asarray(vectors[token], dtype=np.float64)
            if vector.shape != (dimension,):
                raise ValueError(
                    f"embedding for {token!r} has shape {vector.shape}, "
                    f"expected ({dimension},)")
            matrix[index] = vector
            matched += 1
    real_tokens = len(vocab) - 2
    coverage = matched / real_tokens if real_tokens > 0 else 0.0
    if not np.all(np.isfinite(matrix)):
        raise ValueError("embedding table contains non-finite values")
    return matrix, coverage


def load_embeddings(path, vocab, rng):
    """Read word vectors for ``vocab`` from a file into an EmbeddingTable."""
    vectors, dimension = parse_embedding_file(path, restrict_tokens=set(vocab.token_to_index))
    if dimension is None:
        dimension = 50
    matrix, coverage = matrix_from_vectors(vectors, dimension, vocab, rng)
    return EmbeddingTable(dimension=dimension, matrix=matrix, coverage=coverage)
