"""ASAP ingestion, prompt metadata, score normalisation and fold splits.

The eight prompt descriptions (score ranges, trait lists, essay type) are
fixed data, baked into ``PROMPTS``. Essays arrive as a TSV plus a trait-score
CSV; both are validated eagerly, naming the offending essay ids. Scores map
to [0, 1] by min-max normalisation and come back via round-half-away-from-
zero, which matters because kappa is sensitive to the tie rule.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

OVERALL = "overall"


class ValidationError(ValueError):
    """Data failed a consistency check; the message names the essays."""


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: int
    overall_range: tuple[int, int]
    trait_range: tuple[int, int]
    traits: tuple[str, ...]
    essay_type: str

    def __post_init__(self):
        for lo, hi in (self.overall_range, self.trait_range):
            if lo >= hi:
                raise ValueError(f"prompt {self.prompt_id}: empty range {lo}-{hi}")

    def range_for(self, head: str) -> tuple[int, int]:
        if head == OVERALL:
            return self.overall_range
        if head in self.traits:
            return self.trait_range
        raise KeyError(f"prompt {self.prompt_id} has no trait {head!r}")

    @property
    def heads(self) -> tuple[str, ...]:
        return self.traits + (OVERALL,)


_WRITING_TRAITS = ("content", "organization", "word_choice", "sentence_fluency",
                   "conventions")
_SOURCE_TRAITS = ("content", "prompt_adherence", "language", "narrativity")

PROMPTS: dict[int, PromptSpec] = {
    1: PromptSpec(1, (2, 12), (1, 6), _WRITING_TRAITS, "argumentative"),
    2: PromptSpec(2, (1, 6), (1, 6), _WRITING_TRAITS, "argumentative"),
    3: PromptSpec(3, (0, 3), (0, 3), _SOURCE_TRAITS, "source-dependent"),
    4: PromptSpec(4, (0, 3), (0, 3), _SOURCE_TRAITS, "source-dependent"),
    5: PromptSpec(5, (0, 4), (0, 4), _SOURCE_TRAITS, "source-dependent"),
    6: PromptSpec(6, (0, 4), (0, 4), _SOURCE_TRAITS, "source-dependent"),
    7: PromptSpec(7, (0, 30), (0, 6),
                  ("content", "organization", "style", "conventions"), "narrative"),
    8: PromptSpec(8, (0, 60), (0, 12),
                  ("content", "organization", "voice", "word_choice",
                   "sentence_fluency", "conventions"), "narrative"),
}

# full-dataset essay counts per prompt, used by `validate` for reporting
EXPECTED_COUNTS = {1: 1783, 2: 1800, 3: 1726, 4: 1772, 5: 1805, 6: 1800,
                   7: 1569, 8: 723}
EXPECTED_TOTAL = 12978


@dataclass
class EssayRecord:
    essay_id: int
    prompt_id: int
    text: str
    overall_score: int
    trait_scores: dict[str, int] = field(default_factory=dict)

    @property
    def prompt(self) -> PromptSpec:
        return PROMPTS[self.prompt_id]

    def score_for(self, head: str) -> int:
        if head == OVERALL:
            return self.overall_score
        return self.trait_scores[head]


def canonical_trait(name: str) -> str:
    return re.sub(r"[\s\-]+", "_", name.strip().lower())


def normalize_score(score: int, score_range: tuple[int, int]) -> float:
    lo, hi = score_range
    if not lo <= score <= hi:
        raise ValueError(f"score {score} outside range {lo}-{hi}")
    return (score - lo) / (hi - lo)


def denormalize_score(y: float, score_range: tuple[int, int]) -> int:
    """Map [0,1] back onto the integer range, rounding half away from zero."""
    if y < -1e-9 or y > 1 + 1e-9:
        raise ValueError(f"normalised score {y} outside [0, 1]")
    y = min(max(y, 0.0), 1.0)
    lo, hi = score_range
    value = lo + y * (hi - lo)
    rounded = math.floor(value + 0.5) if value >= 0 else math.ceil(value - 0.5)
    return int(min(max(rounded, lo), hi))


# ---------------------------------------------------------------------------
# file loading


def _read_trait_csv(path) -> dict[int, dict[str, int]]:
    table: dict[int, dict[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "essay_id" not in reader.fieldnames:
            raise ValidationError(f"{path}: trait CSV needs an essay_id column")
        for row in reader:
            essay_id = int(row["essay_id"])
            scores = {}
            for col, raw in row.items():
                if col == "essay_id" or raw is None or raw.strip() == "":
                    continue
                scores[canonical_trait(col)] = int(raw)
            table[essay_id] = scores
    return table


def load_dataset(tsv_path, trait_csv_path, encoding: str = "utf-8"):
    """Read the essay TSV and trait CSV into records grouped by prompt.

    The public ASAP file is Latin-1; pass ``encoding="latin-1"`` for it.
    Raises :class:`ValidationError` on the first missing trait set or
    out-of-range score, naming the essay.
    """
    traits_by_id = _read_trait_csv(trait_csv_path)
    by_prompt: dict[int, list[EssayRecord]] = {}
    errors: list[str] = []
    with open(tsv_path, newline="", encoding=encoding) as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        needed = {"essay_id", "essay_set", "essay", "domain1_score"}
        have = set(reader.fieldnames or ())
        if not needed <= have:
            raise ValidationError(f"{tsv_path}: missing columns {sorted(needed - have)}")
        for row in reader:
            essay_id = int(row["essay_id"])
            prompt_id = int(row["essay_set"])
            if prompt_id not in PROMPTS:
                errors.append(f"essay {essay_id}: unknown prompt {prompt_id}")
                continue
            spec = PROMPTS[prompt_id]
            overall = int(row["domain1_score"])
            lo, hi = spec.overall_range
            if not lo <= overall <= hi:
                errors.append(
                    f"essay {essay_id}: overall score {overall} outside {lo}-{hi}")
                continue
            if essay_id not in traits_by_id:
                errors.append(f"essay {essay_id}: missing from trait file")
                continue
            available = traits_by_id[essay_id]
            trait_scores = {}
            ok = True
            for trait in spec.traits:
                if trait not in available:
                    errors.append(f"essay {essay_id}: missing trait {trait!r}")
                    ok = False
                    break
                value = available[trait]
                tlo, thi = spec.trait_range
                if not tlo <= value <= thi:
                    errors.append(
                        f"essay {essay_id}: {trait} score {value} outside {tlo}-{thi}")
                    ok = False
                    break
                trait_scores[trait] = value
            if not ok:
                continue
            by_prompt.setdefault(prompt_id, []).append(
                EssayRecord(essay_id, prompt_id, row["essay"], overall, trait_scores))
    if errors:
        raise ValidationError("; ".join(errors))
    return by_prompt


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_ids: frozenset[int]
    dev_ids: frozenset[int]
    test_ids: frozenset[int]

    def __post_init__(self):
        pools = [self.train_ids, self.dev_ids, self.test_ids]
        total = sum(len(p) for p in pools)
        if total != len(self.train_ids | self.dev_ids | self.test_ids):
            raise ValueError(f"fold {self.fold_id}: partitions overlap")


def make_folds(records, seed: int) -> list[FoldSplit]:
    """Five 60/20/20 splits: shuffle once, rotate the test fifth.

    Fold k tests on block k and validates on block k+1 (mod 5), so every
    essay lands in exactly one test set across the five folds.
    """
    ids = [r.essay_id for r in records]
    if len(ids) < 5:
        raise ValueError(f"need at least 5 records to make folds, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    blocks = [list(b) for b in np.array_split(np.array(order), 5)]
    folds = []
    for k in range(5):
        test = blocks[k]
        dev = blocks[(k + 1) % 5]
        train = [i for j, b in enumerate(blocks) if j not in (k, (k + 1) % 5)
                 for i in b]
        folds.append(FoldSplit(k, frozenset(train), frozenset(dev), frozenset(test)))
    return folds


def read_fold_file(path) -> dict[int, list[FoldSplit]]:
    """Externally published splits: essay_id<TAB>fold_id<TAB>partition lines.

    Returns folds per fold_id; the caller intersects with its prompt's essays.
    """
    buckets: dict[int, dict[str, set[int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("train", "dev", "test"):
                raise ValidationError(
                    f"{path}:{lineno}: expected essay_id<TAB>fold<TAB>"
                    f"train|dev|test, got {line!r}")
            essay_id, fold_id, part = int(parts[0]), int(parts[1]), parts[2]
            buckets.setdefault(fold_id, {"train": set(), "dev": set(), "test": set()})
            buckets[fold_id][part].add(essay_id)
    folds = {}
    for fold_id, parts in sorted(buckets.items()):
        folds[fold_id] = FoldSplit(fold_id, frozenset(parts["train"]),
                                   frozenset(parts["dev"]), frozenset(parts["test"]))
    return folds


def restrict_fold(fold: FoldSplit, essay_ids) -> FoldSplit:
    pool = set(essay_ids)
    return FoldSplit(fold.fold_id, frozenset(fold.train_ids & pool),
                     frozenset(fold.dev_ids & pool), frozenset(fold.test_ids & pool))


def write_fold_file(path, folds: list[FoldSplit]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fold in folds:
            for part, ids in (("train", fold.train_ids), ("dev", fold.dev_ids),
                              ("test", fold.test_ids)):
                for essay_id in sorted(ids):
                    fh.write(f"{essay_id}\t{fold.fold_id}\t{part}\n")
