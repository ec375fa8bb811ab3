"""TSV and Markdown rendering of an :class:`~owforge.evaluate.EvalReport`."""
from __future__ import annotations

from .evaluate import MACRO, PARTITIONS, EvalReport

TSV_COLUMNS = ("task", "category", "partition", "precision", "precision_std", "recall",
               "recall_std", "f1", "f1_std", "samples")

_TASK_TITLES = {
    "MD": "Mention detection",
    "ET": "Entity typing",
    "OpenRE": "Open relation extraction (CaRB, ROUGE-L matcher)",
    "Desc": "Description generation (mean ROUGE-L F1)",
    "Aliases": "Alias generation",
}

# (column header, partition, metric)
_COLUMNS = [
    ("P", "all", "precision"),
    ("R", "all", "recall"),
    ("F1", "all", "f1"),
    ("R seen ent.", "entity:seen", "recall"),
    ("R unseen ent.", "entity:unseen", "recall"),
    ("F1 seen instr.", "instruction:seen", "f1"),
    ("F1 unseen instr.", "instruction:unseen", "f1"),
]


def _num(v):
    return "" if v is None else f"{v:.6f}"


def to_tsv(report: EvalReport) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for task in report.tasks:
        for cat in report.categories + [MACRO]:
            for partition in PARTITIONS:
                cell = report.cells.get((task, cat, partition))
                if cell is None:
                    continue
                lines.append("\t".join([task, cat, partition] + [
                    _num(cell.get(c)) for c in TSV_COLUMNS[3:-1]] + [str(cell.get("samples", ""))]))
    return "\n".join(lines) + "\n"


def _fmt(cell, metric):
    if cell is None or cell.get(metric) is None:
        return "-"
    std = cell.get(f"{metric}_std") or 0.0
    return f"${cell[metric] * 100:.1f}_{{{std * 100:.1f}}}$"


def _task_title(task):
    if task.startswith("EL@"):
        return f"Entity linking (title ROUGE-L F1 >= {task[3:]})"
    return _TASK_TITLES.get(task, task)


def _table(header, rows):
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out.extend("| " + " | ".join(r) + " |" for r in rows)
    return out


def to_markdown(report: EvalReport) -> str:
    """One table per task (a row per category), then macro averages and diagnostics."""
    out = ["# Evaluation report", "", f"Runs (rephrased templates): {report.runs}. "
           "Values are percentages, subscripts are standard deviations across runs; "
           "ET and Aliases are micro-averaged.", ""]
    for task in report.tasks:
        cols = [c for c in _COLUMNS if any((task, cat, c[1]) in report.cells
                                           and report.cells[(task, cat, c[1])].get(c[2]) is not None
                                           for cat in report.categories)]
        if not cols:
            continue
        rows = [[cat] + [_fmt(report.cells.get((task, cat, p)), m) for _, p, m in cols]
                for cat in report.categories]
        out += [f"## {_task_title(task)}", ""] + _table(["Category"] + [c[0] for c in cols], rows) + [""]
    macro_rows = []
    for task in report.tasks:
        cell = report.cells.get((task, MACRO, "all"))
        if cell is not None:
            macro_rows.append([task, _fmt(cell, "f1")])
    if macro_rows:
        out += ["## Macro average over categories", ""] + _table(["Task", "F1 / score"], macro_rows) + [""]
    if report.diagnostics:
        rows = [[cat] + [_fmt(report.diagnostics[cat], n) for n in
                         ("json_error_rate", "number_failure_rate", "type_failure_rate")]
                for cat in report.categories if cat in report.diagnostics]
        out += ["## Instruction-following diagnostics (error rates)", ""] + _table(
            ["Category", "JSON error", "Number failure", "Type failure"], rows) + [""]
    if report.self_check_failures:
        out += ["## Self-check failures", ""] + [f"- {f}" for f in report.self_check_failures] + [""]
    return "\n".join(out)
