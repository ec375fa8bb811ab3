import json

import pytest

from owforge.align import AnnotatedDocument, MentionAnnotation
from owforge.evaluate import (EvalConfig, EvalReport, aggregate_report, diagnostics,
                              partitioned_recall, score_sample, self_check)
from owforge.instructions import Category, InstructedSample, InstructionSpec
from owforge.linearize import project, serialize
from owforge.ontology import EntityProfile
from owforge.report import to_markdown, to_tsv
from owforge.split import Partition, SampleLabels

SEEN, UNSEEN = Partition.SEEN, Partition.UNSEEN


def doc(*surfaces, doc_id="d"):
    text, mentions, pos = "", [], 0
    for s in surfaces:
        text += s + " "
        mentions.append(MentionAnnotation((pos, pos + len(s)), s,
                                          EntityProfile(f"Q{len(mentions) + 1}", s, ["thing"], ["Q9"])))
        pos = len(text)
    return AnnotatedDocument(doc_id, text, mentions, [])


def sample(sid, category, document, **spec):
    return InstructedSample(sid, "Extract entities.", document.text, document,
                            InstructionSpec(category, **spec), "manual")


def test_config_validation():
    assert EvalConfig().tasks() == ["MD", "EL@1", "EL@0.8", "ET", "OpenRE", "Desc", "Aliases"]
    with pytest.raises(ValueError):
        EvalConfig(title_thresholds=(0.8, 1.0))
    with pytest.raises(ValueError):
        EvalConfig(rephrasing_runs=0)
    with pytest.raises(ValueError):
        EvalConfig(title_thresholds=(1.5,))


def test_partitioned_recall_counting():
    gold = doc("A", "B", "C", "D", "E")
    labels = [[SEEN, SEEN, SEEN, UNSEEN, UNSEEN]]
    pred = project(doc("A", "B", "D"))
    rec = partitioned_recall([pred], [gold], labels, "MD")
    assert rec[SEEN] == (2.0, 3, pytest.approx(2 / 3))
    assert rec[UNSEEN] == (1.0, 2, 0.5)
    missed = partitioned_recall([project(doc("A", "B", "C"))], [gold], labels, "MD")
    assert missed[UNSEEN][2] == 0.0 and missed[SEEN][2] == 1.0
    perfect = partitioned_recall([project(gold)], [gold], labels, "MD")
    assert perfect[SEEN][2] == perfect[UNSEEN][2] == 1.0


def test_invalid_prediction_scores_zero():
    s = sample("x", Category.DEFAULT, doc("A"))
    res = score_sample(s, "not json", EvalConfig())
    assert res.outcome == "decode_error"
    assert all(score.prf() == (0.0, 0.0, 0.0) for name, score in res.scores.items() if name != "Desc")
    assert score_sample(s, None, EvalConfig()).outcome == "decode_error"


def test_diagnostics_all_valid_is_zero():
    spec = InstructionSpec(Category.NUMBER, k=1)
    d = diagnostics([serialize(doc("A"))] * 3, [spec] * 3)["Number"]
    assert d.rates() == {"json_error_rate": 0.0, "number_failure_rate": 0.0, "type_failure_rate": None}


def test_diagnostics_strict_versus_lenient():
    text = json.dumps({"entities": [{"mention": "A", "title": "A", "type": []}], "triplets": []})
    spec = InstructionSpec(Category.DEFAULT)
    assert diagnostics([text], [spec])["Default"].json_error_rate == 1.0
    assert diagnostics([text], [spec], strict=False)["Default"].json_error_rate == 0.0


def _runs(f1_by_category_and_run):
    """Build runs where each category's MD F1 is controlled by which predictions are dropped."""
    runs = []
    config = EvalConfig()
    for run in f1_by_category_and_run:
        results = []
        for cat, keep in run.items():
            g = doc("A", "B", doc_id=cat.value)
            pred = project(doc(*["A", "B"][:keep]))
            s = sample(cat.value, cat, g, **({"k": 2} if cat is Category.NUMBER else {}))
            results.append(score_sample(s, json.dumps(pred.to_dict()), config,
                                        SampleLabels(s.sample_id, SEEN, [SEEN, UNSEEN])))
        runs.append(results)
    return runs


def test_aggregate_macro_and_std():
    runs = _runs([{Category.DEFAULT: 2, Category.NUMBER: 1}] * 2)
    report = aggregate_report(runs)
    default = report.cells[("MD", "Default", "all")]
    number = report.cells[("MD", "Number", "all")]
    macro = report.cells[("MD", "Macro", "all")]
    assert default["f1"] == 1.0 and default["f1_std"] == 0.0
    assert number["recall"] == 0.5
    assert macro["recall"] == pytest.approx(0.75)
    assert report.cells[("MD", "Number", "entity:unseen")]["recall"] == 0.0
    assert report.cells[("MD", "Number", "entity:seen")]["recall"] == 1.0
    assert not self_check(report)


def test_aggregate_single_category_macro_equals_row_and_std_across_runs():
    report = aggregate_report(_runs([{Category.DEFAULT: 2}, {Category.DEFAULT: 1}]))
    row, macro = report.cells[("MD", "Default", "all")], report.cells[("MD", "Macro", "all")]
    assert row["recall"] == macro["recall"] == 0.75
    assert row["recall_std"] == pytest.approx(0.25)


def test_self_check_detects_bad_macro():
    report = aggregate_report(_runs([{Category.DEFAULT: 2, Category.NUMBER: 1}]))
    report.cells[("MD", "Macro", "all")]["recall"] = 0.9
    assert any("macro" in f for f in self_check(report))
    report.cells[("MD", "Default", "all")]["f1"] = 1.5
    assert any("outside" in f for f in self_check(report))


def test_report_round_trip_and_rendering():
    specs = {"Default": InstructionSpec(Category.DEFAULT)}
    runs = _runs([{Category.DEFAULT: 2}])
    report = aggregate_report(runs, EvalConfig(), specs, [{"Default": serialize(doc("A", "B"))}])
    again = EvalReport.from_dict(json.loads(json.dumps(report.to_dict())))
    assert to_tsv(again) == to_tsv(report)
    md = to_markdown(report)
    assert "$100.0_{0.0}$" in md
    assert to_tsv(report).splitlines()[0].startswith("task\tcategory\tpartition")
