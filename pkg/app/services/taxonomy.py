"""
Coarse / fine / reasoning reclassification of MMBench, MME and SEED-Bench
sub-tasks, and the scorer that rolls per-sub-task results up into C/F/R.
"""
import csv
import difflib
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.core.errors import ConfigError, TaxonomyLookupError
from app.schemas.taxonomy import (
    AggregationMode,
    Granularity,
    GranularityScores,
    ScoreReport,
    SubTaskResult,
    SubTaskScore,
    TaxonomyEntry,
)

logger = logging.getLogger(__name__)

MMBENCH = "MMBench"
MME = "MME"
SEED = "SEED-Bench"

_C, _F, _R = Granularity.COARSE, Granularity.FINE, Granularity.REASONING

_SEED_PARENT = "Spatial Understanding"
_MME_COARSE_PARENT = "Perception (Coarse-grained)"
_MME_FINE_PARENT = "Perception (Fine-grained)"
_MME_OCR_PARENT = "Perception (OCR)"

# (benchmark, sub-task, granularity, original parent task)
BUILTIN_ROWS: Tuple[Tuple[str, str, Granularity, Optional[str]], ...] = (
    (MMBENCH, "Image Quality", _C, None),
    (MMBENCH, "Image Topic", _C, None),
    (MMBENCH, "Image Emotion", _C, None),
    (MMBENCH, "Image Scene", _C, None),
    (MMBENCH, "Image Style", _C, None),
    (MME, "Artwork", _C, _MME_FINE_PARENT),
    (MME, "Landmark", _C, _MME_FINE_PARENT),
    (MME, "Posters", _C, _MME_FINE_PARENT),
    (MME, "Scene", _C, _MME_FINE_PARENT),
    (SEED, "Scene Understanding", _C, _SEED_PARENT),

    (MMBENCH, "OCR", _F, None),
    (MMBENCH, "Celebrity Recognition", _F, None),
    (MMBENCH, "Object Localization", _F, None),
    (MMBENCH, "Attribute Recognition", _F, None),
    (MMBENCH, "Action Recognition", _F, None),
    (MMBENCH, "Attribute Comparison", _F, None),
    (MMBENCH, "Spatial Relationship", _F, None),
    (MME, "OCR", _F, _MME_OCR_PARENT),
    (MME, "Celebrity", _F, _MME_FINE_PARENT),
    (MME, "Color", _F, _MME_COARSE_PARENT),
    (MME, "Count", _F, _MME_COARSE_PARENT),
    (MME, "Existence", _F, _MME_COARSE_PARENT),
    (MME, "Position", _F, _MME_COARSE_PARENT),
    (SEED, "Instance Identity", _F, _SEED_PARENT),
    (SEED, "Instance Attribute", _F, _SEED_PARENT),
    (SEED, "Instance Location", _F, _SEED_PARENT),
    (SEED, "Instance Counting", _F, _SEED_PARENT),
    (SEED, "Spatial Relationship", _F, _SEED_PARENT),
    (SEED, "Instance Interaction", _F, _SEED_PARENT),
    (SEED, "Text Recognition", _F, _SEED_PARENT),

    (MMBENCH, "Function Reasoning", _R, None),
    (MMBENCH, "Identity Reasoning", _R, None),
    (MMBENCH, "Physical Property Reasoning", _R, None),
    (MMBENCH, "Future Prediction", _R, None),
    (MMBENCH, "Image-Text Understanding", _R, None),
    (MMBENCH, "Nature Relation", _R, None),
    (MMBENCH, "Physical Relation", _R, None),
    (MMBENCH, "Social Relation", _R, None),
    (MME, "Code Reasoning", _R, None),
    (MME, "Commonsense Reasoning", _R, None),
    (MME, "Numerical Calculation", _R, None),
    (MME, "Text Translation", _R, None),
    # Fine in the SEED-only reclassification; the full C/F/R table files it under reasoning.
    (SEED, "Visual Reasoning", _R, _SEED_PARENT),
)

BENCHMARK_ALIASES = {
    "mmb": MMBENCH,
    "seed": SEED,
    "seedbench": SEED,
    "seed bench": SEED,
}

SUB_TASK_ALIASES = {
    (MME, "poster"): "Posters",
    (SEED, "spatial relation"): "Spatial Relationship",
}


def normalize(name: str) -> str:
    return " ".join(str(name).split()).lower()


class TaskTaxonomy:
    """Read-only (benchmark, sub-task) -> granularity map."""

    def __init__(self, entries: Iterable[TaxonomyEntry]):
        self._entries: Dict[Tuple[str, str], TaxonomyEntry] = {}
        self._benchmarks: Dict[str, str] = {}
        for entry in entries:
            key = (normalize(entry.benchmark), normalize(entry.sub_task))
            if key in self._entries:
                raise ConfigError(f"Duplicate taxonomy entry {entry.benchmark}/{entry.sub_task}")
            self._entries[key] = entry
            self._benchmarks.setdefault(normalize(entry.benchmark), entry.benchmark)

    @classmethod
    def builtin(cls) -> "TaskTaxonomy":
        return cls(
            TaxonomyEntry(benchmark=b, sub_task=s, granularity=g, original_parent=p)
            for b, s, g, p in BUILTIN_ROWS
        )

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self, benchmark: Optional[str] = None) -> List[TaxonomyEntry]:
        if benchmark is None:
            return list(self._entries.values())
        bench = normalize(self.resolve_benchmark(benchmark))
        return [e for (b, _), e in self._entries.items() if b == bench]

    @property
    def benchmarks(self) -> List[str]:
        return list(self._benchmarks.values())

    def resolve_benchmark(self, benchmark: str) -> str:
        key = normalize(benchmark)
        key = normalize(BENCHMARK_ALIASES.get(key, key))
        if key not in self._benchmarks:
            near = difflib.get_close_matches(key, list(self._benchmarks), n=3, cutoff=0.4)
            names = [self._benchmarks[n] for n in near] or self.benchmarks
            raise TaxonomyLookupError(f"Unknown benchmark '{benchmark}'. Nearest known: {', '.join(names)}")
        return self._benchmarks[key]

    def lookup(self, benchmark: str, sub_task: str) -> TaxonomyEntry:
        bench = self.resolve_benchmark(benchmark)
        sub = normalize(sub_task)
        sub = normalize(SUB_TASK_ALIASES.get((bench, sub), sub))
        entry = self._entries.get((normalize(bench), sub))
        if entry is None:
            known = {normalize(e.sub_task): e.sub_task for e in self.entries(bench)}
            near = difflib.get_close_matches(sub, list(known), n=3, cutoff=0.5)
            names = [known[n] for n in near] or sorted(known.values())
            raise TaxonomyLookupError(
                f"Unknown sub-task '{sub_task}' for {bench}. Nearest known: {', '.join(names)}"
            )
        return entry

    def classify(self, benchmark: str, sub_task: str) -> Granularity:
        return self.lookup(benchmark, sub_task).granularity

    def with_overrides(self, extra: Iterable[TaxonomyEntry]) -> "TaskTaxonomy":
        """Adds user entries. Built-in rows may be repeated but never reclassified."""
        entries = dict(self._entries)
        for entry in extra:
            key = (normalize(entry.benchmark), normalize(entry.sub_task))
            current = entries.get(key)
            if current is not None:
                if current.granularity is not entry.granularity:
                    raise ConfigError(
                        f"Cannot reclassify {current.benchmark}/{current.sub_task}: "
                        f"{current.granularity.value} -> {entry.granularity.value}"
                    )
                continue
            entries[key] = entry
        return TaskTaxonomy(entries.values())


BUILTIN = TaskTaxonomy.builtin()


def classify(benchmark: str, sub_task: str, taxonomy: TaskTaxonomy = BUILTIN) -> Granularity:
    return taxonomy.classify(benchmark, sub_task)


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def _scores(rows: List[SubTaskScore], mode: AggregationMode) -> GranularityScores:
    out = {}
    for g in Granularity:
        bucket = [r for r in rows if r.granularity is g]
        if not bucket:
            out[g.value] = None
        elif mode is AggregationMode.MACRO:
            out[g.value] = _mean([r.accuracy for r in bucket])
        else:
            out[g.value] = sum(r.correct for r in bucket) / sum(r.total for r in bucket)
    return GranularityScores(**out)


def merge_results(results: Iterable[SubTaskResult], taxonomy: TaskTaxonomy = BUILTIN) -> List[SubTaskScore]:
    """Classifies each result and merges rows naming the same sub-task, in first-seen order."""
    merged: Dict[Tuple[str, str], List] = {}
    for r in results:
        entry = taxonomy.lookup(r.benchmark, r.sub_task)
        key = (entry.benchmark, entry.sub_task)
        if key not in merged:
            merged[key] = [entry.granularity, 0, 0]
        merged[key][1] += r.correct
        merged[key][2] += r.total
    return [
        SubTaskScore(benchmark=b, sub_task=s, granularity=g, correct=c, total=t, accuracy=c / t)
        for (b, s), (g, c, t) in merged.items()
    ]


def aggregate(
    results: Iterable[SubTaskResult],
    mode: AggregationMode = AggregationMode.MACRO,
    taxonomy: TaskTaxonomy = BUILTIN,
) -> ScoreReport:
    mode = AggregationMode(mode)
    rows = merge_results(results, taxonomy)
    by_bench: Dict[str, List[SubTaskScore]] = defaultdict(list)
    for r in rows:
        by_bench[r.benchmark].append(r)
    return ScoreReport(
        mode=mode,
        pooled=_scores(rows, mode),
        per_benchmark={b: _scores(rs, mode) for b, rs in by_bench.items()},
        sub_tasks=rows,
    )


# -- file formats ------------------------------------------------------------

RESULT_FIELDS = ("benchmark", "sub_task", "correct", "total")
TAXONOMY_FIELDS = ("benchmark", "sub_task", "granularity")


def _read_records(path, required: Sequence[str]) -> List[Tuple[int, dict]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read '{path}': {e}") from e

    records: List[Tuple[int, dict]] = []
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{lineno}: invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise ConfigError(f"{path}:{lineno}: expected an object")
            missing = [f for f in required if f not in record]
            if missing:
                raise ConfigError(f"{path}:{lineno}: missing fields {', '.join(missing)}")
            records.append((lineno, record))
        return records

    reader = csv.DictReader(text.splitlines())
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [f for f in required if f not in header]
    if missing:
        raise ConfigError(f"{path}: header must contain {', '.join(required)}; missing {', '.join(missing)}")
    reader.fieldnames = header
    for lineno, row in enumerate(reader, start=2):
        records.append((lineno, {k: (v.strip() if isinstance(v, str) else v) for k, v in row.items()}))
    return records


def load_results(path) -> List[SubTaskResult]:
    results = []
    for lineno, record in _read_records(path, RESULT_FIELDS):
        try:
            results.append(SubTaskResult(**{f: record[f] for f in RESULT_FIELDS}))
        except ValidationError as e:
            raise ConfigError(f"{path}:{lineno}: {e.errors()[0]['msg']}") from e
    logger.info("Loaded %d sub-task results from %s", len(results), path)
    return results


def load_taxonomy_file(path) -> List[TaxonomyEntry]:
    entries = []
    for lineno, record in _read_records(path, TAXONOMY_FIELDS):
        try:
            entries.append(TaxonomyEntry(**{f: record[f] for f in TAXONOMY_FIELDS}))
        except ValidationError as e:
            raise ConfigError(f"{path}:{lineno}: {e.errors()[0]['msg']}") from e
    return entries


def load_taxonomy(override_path=None) -> TaskTaxonomy:
    if override_path is None:
        return BUILTIN
    return BUILTIN.with_overrides(load_taxonomy_file(override_path))
