"""Corpus-level evaluation: per-sample scoring, diagnostics, aggregation and reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instructions import NUMBERED, TYPED, Category, InstructedSample, InstructionSpec
from .linearize import ParseOutcome, TargetObject, parse_and_validate
from .metrics import (TaskScore, _norm, score_aliases, score_description, score_entity_linking,
                      score_entity_typing, score_mention_detection, score_open_re)
from .split import Partition, SampleLabels


@dataclass
class EvalConfig:
    title_thresholds: tuple[float, ...] = (1.0, 0.8)
    tokenizer: str = "alnum-lower"
    carb_match_threshold: float = 0.0
    rephrasing_runs: int = 3
    strict: bool = True

    def __post_init__(self):
        self.title_thresholds = tuple(self.title_thresholds)
        if not all(0 < t <= 1 for t in self.title_thresholds):
            raise ValueError("title thresholds must lie in (0, 1]")
        if list(self.title_thresholds) != sorted(self.title_thresholds, reverse=True):
            raise ValueError("title thresholds must be sorted descending")
        if self.rephrasing_runs < 1:
            raise ValueError("rephrasing_runs must be >= 1")
        if self.tokenizer != "alnum-lower":
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")

    def tasks(self) -> list[str]:
        return (["MD"] + [f"EL@{t:g}" for t in self.title_thresholds]
                + ["ET", "OpenRE", "Desc", "Aliases"])


@dataclass
class PredictionRecord:
    sample_id: str
    raw_text: str


@dataclass
class SampleResult:
    sample_id: str
    category: str
    outcome: str
    scores: dict[str, TaskScore]
    instruction_partition: Partition | None = None
    entity_partitions: list[Partition] | None = None


def score_target(pred: TargetObject | None, gold, config: EvalConfig) -> dict[str, TaskScore]:
    scores = {"MD": score_mention_detection(pred, gold)}
    for t in config.title_thresholds:
        scores[f"EL@{t:g}"] = score_entity_linking(pred, gold, t)
    scores["ET"] = score_entity_typing(pred, gold)
    scores["OpenRE"] = score_open_re(pred, gold, config.carb_match_threshold)
    scores["Desc"] = score_description(pred, gold)
    scores["Aliases"] = score_aliases(pred, gold)
    return scores


def score_sample(sample: InstructedSample, raw_text: str | None, config: EvalConfig,
                 labels: SampleLabels | None = None) -> SampleResult:
    """Parse one prediction and score it on every task.

    A missing or invalid prediction (decode or schema error) scores zero.
    """
    if raw_text is None:
        outcome = ParseOutcome("decode_error", message="no prediction")
    else:
        outcome = parse_and_validate(raw_text, strict=config.strict)
    scores = score_target(outcome.target if outcome.ok else None, sample.target, config)
    return SampleResult(
        sample.sample_id, sample.spec.category.value, outcome.kind, scores,
        labels.instruction_partition if labels else None,
        labels.entity_partitions if labels else None,
    )


def recall_by_partition(scores: list[TaskScore], labels: list[list[Partition]]) -> dict:
    """Recall numerator/denominator restricted to gold items of each entity partition.

    A gold item (a mention, or a triplet through its endpoints) is unseen when
    any mention behind it is unseen.
    """
    tally = {p: [0.0, 0] for p in Partition}
    for score, sample_labels in zip(scores, labels):
        for credit, owners in zip(score.gold_credit, score.gold_owners):
            part = (Partition.UNSEEN if any(sample_labels[o] is Partition.UNSEEN for o in owners)
                    else Partition.SEEN)
            tally[part][0] += credit
            tally[part][1] += 1
    return {p: (num, den, num / den if den else None) for p, (num, den) in tally.items()}


def partitioned_recall(preds, golds, labels, task: str, config: EvalConfig | None = None) -> dict:
    """Recall per entity partition for one task over parallel lists of predictions and golds."""
    config = config or EvalConfig()
    scores = [score_target(p, g, config)[task] for p, g in zip(preds, golds)]
    return recall_by_partition(scores, labels)


@dataclass
class Diagnostics:
    samples: int = 0
    json_errors: int = 0
    number_checked: int = 0
    number_failures: int = 0
    type_checked: int = 0
    type_failures: int = 0

    @property
    def json_error_rate(self) -> float | None:
        return self.json_errors / self.samples if self.samples else None

    @property
    def number_failure_rate(self) -> float | None:
        return self.number_failures / self.number_checked if self.number_checked else None

    @property
    def type_failure_rate(self) -> float | None:
        return self.type_failures / self.type_checked if self.type_checked else None

    def rates(self) -> dict[str, float | None]:
        return {"json_error_rate": self.json_error_rate,
                "number_failure_rate": self.number_failure_rate,
                "type_failure_rate": self.type_failure_rate}


def diagnostics(preds, specs: list[InstructionSpec], strict: bool = True) -> dict[str, Diagnostics]:
    """Instruction-following failure counts per category.

    ``preds`` holds raw output strings or :class:`ParseOutcome` objects. The
    number and type checks only look at predictions that parsed.
    """
    out: dict[str, Diagnostics] = {}
    for pred, spec in zip(preds, specs):
        outcome = pred if isinstance(pred, ParseOutcome) else (
            parse_and_validate(pred, strict) if pred is not None
            else ParseOutcome("decode_error", message="no prediction"))
        d = out.setdefault(spec.category.value, Diagnostics())
        d.samples += 1
        if not outcome.ok:
            d.json_errors += 1
            continue
        target = outcome.target
        if spec.category in NUMBERED:
            d.number_checked += 1
            d.number_failures += len(target.entities) != spec.k
        if spec.category in TYPED:
            wanted = {_norm(t) for t in spec.types}
            d.type_checked += 1
            d.type_failures += any(not ({_norm(t) for t in e.type} & wanted) for e in target.entities)
    return out


# ---------------------------------------------------------------------------
# aggregation

PARTITIONS = ("all", "entity:seen", "entity:unseen", "instruction:seen", "instruction:unseen")
MACRO = "Macro"


@dataclass
class Cell:
    """Metric values for one (task, category, partition); lists hold one entry per run."""

    precision: list[float | None] = field(default_factory=list)
    recall: list[float | None] = field(default_factory=list)
    f1: list[float | None] = field(default_factory=list)
    samples: int = 0

    @staticmethod
    def _stat(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None, None
        arr = np.asarray(vals, dtype=float)
        return float(arr.mean()), float(arr.std())

    def summary(self) -> dict:
        out = {}
        for name in ("precision", "recall", "f1"):
            mean, std = self._stat(getattr(self, name))
            out[name] = mean
            out[f"{name}_std"] = std
        return out


@dataclass
class EvalReport:
    tasks: list[str]
    categories: list[str]
    runs: int
    cells: dict[tuple[str, str, str], dict] = field(default_factory=dict)
    diagnostics: dict[str, dict] = field(default_factory=dict)
    self_check_failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tasks": self.tasks,
            "categories": self.categories,
            "runs": self.runs,
            "rows": [{"task": t, "category": c, "partition": p, **v}
                     for (t, c, p), v in self.cells.items()],
            "diagnostics": self.diagnostics,
            "self_check_failures": self.self_check_failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rep = cls(d["tasks"], d["categories"], d["runs"], diagnostics=d.get("diagnostics", {}),
                  self_check_failures=d.get("self_check_failures", []))
        for row in d["rows"]:
            row = dict(row)
            key = (row.pop("task"), row.pop("category"), row.pop("partition"))
            rep.cells[key] = row
        return rep


def _slice_values(task: str, results: list[SampleResult], partition: str):
    if partition.startswith("instruction:"):
        want = Partition(partition.split(":")[1])
        results = [r for r in results if r.instruction_partition is want]
        if not results:
            return None
        merged = TaskScore.merge(r.scores[task] for r in results)
        if task == "Desc":
            return None, None, merged.mean, len(results)
        return (*_micro(results, task), len(results))
    if partition.startswith("entity:"):
        labelled = [r for r in results if r.entity_partitions is not None]
        if not labelled:
            return None
        want = Partition(partition.split(":")[1])
        rec = recall_by_partition([r.scores[task] for r in labelled],
                                  [r.entity_partitions for r in labelled])[want]
        if rec[1] == 0:
            return None
        return None, rec[2], None, len(labelled)
    if task == "Desc":
        return None, None, TaskScore.merge(r.scores[task] for r in results).mean, len(results)
    return (*_micro(results, task), len(results))


def _micro(results, task):
    """Corpus-level P/R/F1 from pooled item credits; invalid outputs add zero-credit gold items."""
    scores = [r.scores[task] for r in results]
    merged = TaskScore.merge(scores)
    if not merged.pred_credit and not merged.gold_credit:
        valid = [s for s in scores if not s.invalid]
        return (1.0, 1.0, 1.0) if valid else (0.0, 0.0, 0.0)
    p = sum(merged.pred_credit) / len(merged.pred_credit) if merged.pred_credit else 0.0
    r = sum(merged.gold_credit) / len(merged.gold_credit) if merged.gold_credit else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def _category_order(results):
    present = {r.category for run in results for r in run}
    return [c.value for c in Category if c.value in present]


def aggregate_report(runs: list[list[SampleResult]], config: EvalConfig | None = None,
                     specs: dict[str, InstructionSpec] | None = None,
                     raw_outputs: list[dict[str, str | None]] | None = None) -> EvalReport:
    """Average each cell over rephrasing runs and attach the macro row.

    The macro row for a partition is the mean over categories of that run's
    category values, then summarized over runs like every other cell.
    """
    config = config or EvalConfig()
    tasks = config.tasks()
    categories = _category_order(runs)
    report = EvalReport(tasks, categories, len(runs))
    for task in tasks:
        for partition in PARTITIONS:
            per_cat: dict[str, Cell] = {}
            macro = Cell()
            for run in runs:
                run_vals = {"precision": [], "recall": [], "f1": []}
                for cat in categories:
                    vals = _slice_values(task, [r for r in run if r.category == cat], partition)
                    if vals is None:
                        continue
                    cell = per_cat.setdefault(cat, Cell())
                    for name, v in zip(("precision", "recall", "f1"), vals[:3]):
                        getattr(cell, name).append(v)
                        if v is not None:
                            run_vals[name].append(v)
                    cell.samples = vals[3]
                for name, vals in run_vals.items():
                    getattr(macro, name).append(float(np.mean(vals)) if vals else None)
            for cat, cell in per_cat.items():
                report.cells[(task, cat, partition)] = {**cell.summary(), "samples": cell.samples}
            if per_cat:
                report.cells[(task, MACRO, partition)] = {**macro.summary(),
                                                          "samples": sum(c.samples for c in per_cat.values())}
    if specs is not None and raw_outputs is not None:
        per_run = []
        for outputs in raw_outputs:
            ids = list(specs)
            per_run.append(diagnostics([outputs.get(sid) for sid in ids],
                                       [specs[sid] for sid in ids], config.strict))
        for cat in categories:
            entry = {}
            for name in ("json_error_rate", "number_failure_rate", "type_failure_rate"):
                vals = [d[cat].rates()[name] for d in per_run if cat in d]
                vals = [v for v in vals if v is not None]
                if vals:
                    entry[name] = float(np.mean(vals))
                    entry[f"{name}_std"] = float(np.std(vals))
                else:
                    entry[name] = None
            report.diagnostics[cat] = entry
    report.self_check_failures = self_check(report)
    return report


def self_check(report: EvalReport) -> list[str]:
    """Report invariants: every rate in [0, 1]; macro row equals the mean of category rows."""
    failures = []
    for key, vals in report.cells.items():
        for name in ("precision", "recall", "f1"):
            v = vals.get(name)
            if v is not None and not (0.0 <= v <= 1.0 + 1e-12):
                failures.append(f"{key} {name}={v} outside [0, 1]")
    for cat, rates in report.diagnostics.items():
        for name, v in rates.items():
            if v is not None and not name.endswith("_std") and not (0.0 <= v <= 1.0):
                failures.append(f"diagnostics {cat} {name}={v} outside [0, 1]")
    for task in report.tasks:
        for partition in PARTITIONS:
            macro = report.cells.get((task, MACRO, partition))
            if macro is None:
                continue
            for name in ("precision", "recall", "f1"):
                rows = [report.cells[(task, c, partition)][name] for c in report.categories
                        if (task, c, partition) in report.cells
                        and report.cells[(task, c, partition)][name] is not None]
                if macro[name] is None or not rows:
                    continue
                # categories occur in every run, so averaging over runs commutes
                if not math.isclose(macro[name], float(np.mean(rows)), abs_tol=1e-9):
                    failures.append(f"macro {task}/{partition}/{name} != mean of rows")
    return failures
