import csv
import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from app.core.errors import ConfigError, TaxonomyLookupError
from app.schemas.taxonomy import AggregationMode, Granularity, SubTaskResult, TaxonomyEntry
from app.services import taxonomy
from app.services.taxonomy import BUILTIN, aggregate, classify, load_results, load_taxonomy, merge_results

GOLDEN = Path(__file__).parent / "golden" / "granularity_rows.csv"


def _golden_rows():
    with GOLDEN.open(encoding="utf-8") as fh:
        return [(r["benchmark"], r["sub_task"], Granularity(r["granularity"])) for r in csv.DictReader(fh)]


def _result(bench, sub, correct, total):
    return SubTaskResult(benchmark=bench, sub_task=sub, correct=correct, total=total)


def test_every_golden_row_classifies():
    rows = _golden_rows()
    assert len(rows) == 42
    for bench, sub, granularity in rows:
        assert classify(bench, sub) is granularity, (bench, sub)


def test_builtin_counts_per_benchmark_and_granularity():
    counts = {}
    for bench, _, g in _golden_rows():
        counts[(bench, g)] = counts.get((bench, g), 0) + 1
    assert counts == {
        ("MMBench", Granularity.COARSE): 5, ("MME", Granularity.COARSE): 4, ("SEED-Bench", Granularity.COARSE): 1,
        ("MMBench", Granularity.FINE): 7, ("MME", Granularity.FINE): 6, ("SEED-Bench", Granularity.FINE): 6,
        ("MMBench", Granularity.REASONING): 8, ("MME", Granularity.REASONING): 4, ("SEED-Bench", Granularity.REASONING): 1,
    }


def test_builtin_holds_golden_rows_plus_seed_text_recognition():
    golden = {(b, s) for b, s, _ in _golden_rows()}
    builtin = {(e.benchmark, e.sub_task) for e in BUILTIN.entries()}
    assert builtin - golden == {("SEED-Bench", "Text Recognition")}
    assert golden <= builtin


@pytest.mark.parametrize("bench,sub,expected", [
    ("MME", "Color", Granularity.FINE),
    ("MME", "Scene", Granularity.COARSE),
    ("SEED-Bench", "Scene Understanding", Granularity.COARSE),
    ("MMBench", "Object Localization", Granularity.FINE),
    ("SEED-Bench", "Text Recognition", Granularity.FINE),
])
def test_classify_examples(bench, sub, expected):
    assert classify(bench, sub) is expected


def test_reclassified_rows_keep_original_parent():
    color = BUILTIN.lookup("MME", "Color")
    assert color.granularity is Granularity.FINE
    assert color.original_parent == "Perception (Coarse-grained)"
    scene = BUILTIN.lookup("MME", "Scene")
    assert scene.original_parent == "Perception (Fine-grained)"
    assert BUILTIN.lookup("SEED-Bench", "Instance Location").original_parent == "Spatial Understanding"


def test_lookup_ignores_case_and_whitespace():
    assert classify("  mme ", "COLOR") is Granularity.FINE
    assert classify("MMBench", "object   localization") is Granularity.FINE


def test_aliases():
    assert classify("MMB", "OCR") is Granularity.FINE
    assert classify("seedbench", "Spatial Relation") is Granularity.FINE
    assert classify("MME", "Poster") is Granularity.COARSE


def test_unknown_sub_task_names_nearest():
    with pytest.raises(TaxonomyLookupError) as exc:
        classify("MME", "Colour")
    assert "Color" in str(exc.value)


def test_unknown_benchmark_names_nearest():
    with pytest.raises(TaxonomyLookupError) as exc:
        classify("MMBnech", "OCR")
    assert "MMBench" in str(exc.value)


def test_entries_by_benchmark():
    assert len(BUILTIN.entries("SEED-Bench")) == 9
    assert set(BUILTIN.benchmarks) == {"MMBench", "MME", "SEED-Bench"}


# -- aggregation -----------------------------------------------------------------

def test_single_sub_task_per_bucket():
    results = [_result("MME", "Scene", 3, 4), _result("MME", "Color", 1, 4), _result("MME", "Code Reasoning", 2, 8)]
    for mode in AggregationMode:
        report = aggregate(results, mode)
        assert report.pooled.coarse == 0.75
        assert report.pooled.fine == 0.25
        assert report.pooled.reasoning == 0.25


def test_macro_and_micro_differ_with_unequal_totals():
    equal = [_result("MME", "Color", 10, 10), _result("MME", "Count", 0, 10)]
    assert aggregate(equal, "macro").pooled.fine == 0.5
    assert aggregate(equal, "micro").pooled.fine == 0.5
    unequal = [_result("MME", "Color", 10, 10), _result("MME", "Count", 0, 30)]
    assert aggregate(unequal, "macro").pooled.fine == 0.5
    assert aggregate(unequal, "micro").pooled.fine == 0.25


def test_all_correct_scores_one():
    results = [_result(b, s, 7, 7) for b, s, _ in _golden_rows()]
    report = aggregate(results)
    for g in Granularity:
        assert report.pooled.get(g) == 1.0
        for scores in report.per_benchmark.values():
            assert scores.get(g) == 1.0


def test_empty_bucket_is_absent():
    report = aggregate([_result("MMBench", "OCR", 1, 2)])
    assert report.pooled.fine == 0.5
    assert report.pooled.coarse is None
    assert report.pooled.reasoning is None


def test_split_rows_merge_before_scoring():
    whole = [_result("MME", "Color", 5, 10), _result("MME", "Count", 1, 2)]
    split = [_result("MME", "color", 2, 5), _result("MME", "Count", 1, 2), _result("MME", "Color", 3, 5)]
    for mode in AggregationMode:
        assert aggregate(whole, mode).pooled == aggregate(split, mode).pooled
    merged = merge_results(split)
    assert [(r.sub_task, r.correct, r.total) for r in merged] == [("Color", 5, 10), ("Count", 1, 2)]


def test_per_benchmark_views():
    results = [_result("MME", "Color", 1, 2), _result("SEED-Bench", "Instance Counting", 3, 4)]
    report = aggregate(results)
    assert report.per_benchmark["MME"].fine == 0.5
    assert report.per_benchmark["SEED-Bench"].fine == 0.75
    assert report.pooled.fine == pytest.approx(0.625)


def test_unclassifiable_result_fails():
    with pytest.raises(TaxonomyLookupError):
        aggregate([_result("MME", "Sketch", 1, 2)])


@pytest.mark.parametrize("correct,total", [(3, 2), (-1, 2), (0, 0)])
def test_result_counts_validated(correct, total):
    with pytest.raises(ValidationError):
        _result("MME", "Color", correct, total)


# -- files -----------------------------------------------------------------------

def test_load_results_csv(tmp_path):
    path = tmp_path / "results.csv"
    path.write_text("benchmark, sub_task, correct, total\nMME, Color, 3, 4\nMMB,OCR,1,2\n", encoding="utf-8")
    results = load_results(path)
    assert [(r.benchmark, r.sub_task, r.correct, r.total) for r in results] == [("MME", "Color", 3, 4), ("MMB", "OCR", 1, 2)]


def test_load_results_jsonl(tmp_path):
    path = tmp_path / "results.jsonl"
    lines = [json.dumps({"benchmark": "MME", "sub_task": "Scene", "correct": 2, "total": 2}), ""]
    path.write_text("\n".join(lines), encoding="utf-8")
    assert load_results(path)[0].accuracy == 1.0


def test_missing_header_field(tmp_path):
    path = tmp_path / "results.csv"
    path.write_text("benchmark,sub_task,correct\nMME,Color,3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_results(path)


def test_bad_row_names_its_line(tmp_path):
    path = tmp_path / "results.csv"
    path.write_text("benchmark,sub_task,correct,total\nMME,Color,1,2\nMME,Count,5,2\n", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        load_results(path)
    assert ":3:" in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_results(tmp_path / "nope.csv")


def test_override_file_registers_new_benchmark(tmp_path):
    path = tmp_path / "extra.csv"
    path.write_text("benchmark,sub_task,granularity\nMyBench,Tiny Text,Fine\nMME,Color,fine\n", encoding="utf-8")
    tax = load_taxonomy(path)
    assert tax.classify("mybench", "tiny text") is Granularity.FINE
    assert len(tax) == len(BUILTIN) + 1
    with pytest.raises(TaxonomyLookupError):
        BUILTIN.classify("MyBench", "Tiny Text")


def test_override_cannot_reclassify_builtin(tmp_path):
    path = tmp_path / "extra.csv"
    path.write_text("benchmark,sub_task,granularity\nMME,Color,coarse\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_taxonomy(path)


def test_no_override_returns_builtin():
    assert load_taxonomy() is BUILTIN


def test_duplicate_entries_rejected():
    entry = TaxonomyEntry(benchmark="X", sub_task="Y", granularity="fine")
    with pytest.raises(ConfigError):
        taxonomy.TaskTaxonomy([entry, entry])
