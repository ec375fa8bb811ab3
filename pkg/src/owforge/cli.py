"""``forge`` command line: ingest, align, augment, split, score and report stages.

Stages only talk through files. Every artifact is written atomically and gets
a ``<artifact>.manifest.json`` with input digests, configuration and tool
version.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import multiprocessing as mp
import os
import shutil
import sys

from . import __version__
from .align import AnnotatedDocument, density_stats, distant_supervise_relations, weak_supervise
from .evaluate import EvalConfig, aggregate_report, score_sample
from .instructions import (InstructedSample, augment_document, document_rng, load_templates,
                           make_cross_instruction_samples, make_eval_samples)
from .ontology import Ontology, parse_wikidata_dump, snapshot_date_from_name
from .report import to_markdown, to_tsv
from .split import ParamInventory, SampleLabels, build_open_world_corpus, label_sample
from .textutil import atomic_write, open_binary, open_text
from .wikipedia import (OFFSET_CONVENTION, Paragraph, paragraph_from_article,
                        parse_wikipedia_dump, resolve_anchor_targets)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("owforge")

CACHE_ENV = "OWFORGE_CACHE_DIR"
PARAGRAPH_FORMAT = "owforge-paragraphs"

# input option -> stage that produces it
PRODUCERS = {
    "ontology": "ingest-wikidata",
    "train_ontology": "ingest-wikidata",
    "paragraphs": "ingest-wikipedia",
    "annotated": "align",
    "gold": "augment",
    "samples": "augment",
    "train_samples": "augment",
    "train_ids": "ingest-wikipedia",
    "eval": "score",
    "partitions": "split",
}


class StageError(Exception):
    pass


# ---------------------------------------------------------------------------
# file helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_jsonl(path):
    with open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path, rows) -> int:
    n = 0
    with atomic_write(path) as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def write_manifest(stage, args, inputs, outputs, extra=None) -> None:
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "config", "verbose") and isinstance(v, (str, int, float, bool, list, type(None)))}
    for out in outputs:
        manifest = {
            "stage": stage,
            "tool": "owforge",
            "tool_version": __version__,
            "config": config,
            "inputs": {p: sha256_file(p) for p in inputs if p},
            "output": {"path": out, "sha256": sha256_file(out)},
        }
        if extra:
            manifest.update(extra)
        with atomic_write(out + ".manifest.json") as fh:
            json.dump(manifest, fh, indent=2, ensure_ascii=False)
            fh.write("\n")


def require_inputs(args, names) -> None:
    """Check every input path up front so no stage runs half-way."""
    for name in names:
        value = getattr(args, name, None)
        paths = value if isinstance(value, list) else [value]
        for path in paths:
            if path and not os.path.exists(path):
                producer = PRODUCERS.get(name)
                hint = f"; run `forge {producer}` first" if producer else ""
                raise StageError(f"missing input {path!r} for --{name.replace('_', '-')}{hint}")


def load_ontology(path) -> Ontology:
    with open_text(path) as fh:
        return Ontology.read_snapshot(fh)


def read_paragraphs(path):
    for row in read_jsonl(path):
        if "format" in row:
            continue
        yield Paragraph.from_dict(row)


def pmap(fn, items, jobs, initializer=None, initargs=()):
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1:
        if initializer:
            initializer(*initargs)
        yield from map(fn, items)
        return
    ctx = mp.get_context("fork")
    with ctx.Pool(jobs, initializer=initializer, initargs=initargs) as pool:
        yield from pool.imap(fn, items, chunksize=64)


# ---------------------------------------------------------------------------
# stages


def cmd_ingest_wikidata(args):
    require_inputs(args, ["dump", "allowlist"])
    allow = None
    if args.allowlist:
        with open(args.allowlist, encoding="utf-8") as fh:
            allow = {line.strip() for line in fh if line.strip()}
    date = (dt.date.fromisoformat(args.snapshot_date) if args.snapshot_date
            else snapshot_date_from_name(os.path.basename(args.dump)))
    cache_path = None
    cache_dir = os.environ.get(CACHE_ENV)
    if cache_dir:
        key = hashlib.sha256(json.dumps(
            [sha256_file(args.dump), sorted(allow or []), str(date), args.language,
             args.type_property, args.hierarchy_property, __version__]).encode()).hexdigest()
        cache_path = os.path.join(cache_dir, f"ontology-{key[:24]}.jsonl")
    skipped = None
    if cache_path and os.path.exists(cache_path):
        logger.info("reusing cached ontology %s", cache_path)
        with open(cache_path, "rb") as src, atomic_write(args.out, "wb") as dst:
            shutil.copyfileobj(src, dst)
    else:
        with open_binary(args.dump) as stream:
            onto = parse_wikidata_dump(stream, allow, snapshot_date=date, language=args.language,
                                       type_property=args.type_property,
                                       hierarchy_property=args.hierarchy_property)
        with atomic_write(args.out) as fh:
            onto.write_snapshot(fh)
        skipped = [list(s) for s in onto.skip_log[:100]]
        logger.info("ontology: %d entities, %d properties, %d skipped lines",
                    len(onto.entities), len(onto.properties), len(onto.skip_log))
        if cache_path:
            os.makedirs(cache_dir, exist_ok=True)
            shutil.copyfile(args.out, cache_path)
    write_manifest("ingest-wikidata", args, [args.dump, args.allowlist], [args.out],
                   {"skipped_lines": skipped} if skipped else None)


def _paragraph_row(article):
    return paragraph_from_article(article).to_dict()


def cmd_ingest_wikipedia(args):
    require_inputs(args, ["dump"])
    ids = []

    def articles():
        with open_binary(args.dump) as stream:
            for art in parse_wikipedia_dump(stream):
                ids.append(art.page_id)
                yield art

    def rows():
        yield {"format": PARAGRAPH_FORMAT, "offsets": OFFSET_CONVENTION}
        yield from pmap(_paragraph_row, articles(), args.jobs)

    n = write_jsonl(args.out, rows()) - 1
    outputs = [args.out]
    if args.ids_out:
        with atomic_write(args.ids_out) as fh:
            fh.writelines(f"{i}\n" for i in ids)
        outputs.append(args.ids_out)
    logger.info("wrote %d lead paragraphs", n)
    write_manifest("ingest-wikipedia", args, [args.dump], outputs)


_WORKER_ONTOLOGY = None


def _set_worker_ontology(path):
    global _WORKER_ONTOLOGY
    _WORKER_ONTOLOGY = load_ontology(path)


def _align_row(para_dict):
    onto = _WORKER_ONTOLOGY
    para = resolve_anchor_targets(Paragraph.from_dict(para_dict), onto.title_index)
    doc = distant_supervise_relations(weak_supervise(para, onto), onto)
    return doc.to_dict(), para.dropped_anchors


def cmd_align(args):
    require_inputs(args, ["ontology", "paragraphs"])
    counts = {"documents": 0, "unresolved_anchors": 0, "untitled_mentions": 0}

    def rows():
        source = (row for row in read_jsonl(args.paragraphs) if "format" not in row)
        for doc, dropped in pmap(_align_row, source, args.jobs, _set_worker_ontology, (args.ontology,)):
            counts["documents"] += 1
            counts["unresolved_anchors"] += dropped
            counts["untitled_mentions"] += doc.get("dropped_mentions", 0)
            yield doc

    write_jsonl(args.out, rows())
    logger.info("aligned %(documents)d documents (%(unresolved_anchors)d unresolved anchors)", counts)
    write_manifest("align", args, [args.ontology, args.paragraphs], [args.out], {"counts": counts})


def cmd_stats(args):
    require_inputs(args, ["annotated", "train_ontology"])
    train = set(load_ontology(args.train_ontology).entities) if args.train_ontology else None
    docs = (AnnotatedDocument.from_dict(r) for r in read_jsonl(args.annotated))
    st = density_stats(docs, train)
    with atomic_write(args.out) as fh:
        fh.write(st.to_tsv(args.split_name))
    write_manifest("stats", args, [args.annotated, args.train_ontology], [args.out])


def _parse_weights(spec):
    if not spec:
        return None
    if isinstance(spec, dict):
        return {k: float(v) for k, v in spec.items()}
    out = {}
    for part in spec.split(","):
        name, _, w = part.partition("=")
        out[name.strip()] = float(w)
    return out


def cmd_augment(args):
    require_inputs(args, ["annotated", "ontology", "templates"])
    if args.seed is None:
        raise StageError("--seed is required for augment")
    onto = load_ontology(args.ontology)
    pool = load_templates(args.templates)
    weights = _parse_weights(args.weights)

    def rows():
        for row in read_jsonl(args.annotated):
            doc = AnnotatedDocument.from_dict(row)
            rng = document_rng(args.seed, doc.doc_id)
            if args.mode == "train":
                samples = augment_document(doc, pool, onto, rng, weights=weights,
                                           max_arity=args.max_arity, rephrasings=args.rephrasings)
            else:
                samples = make_eval_samples(doc, pool, onto, rng, cross=args.cross,
                                            max_arity=args.max_arity, rephrasings=args.rephrasings)
            for s in samples:
                yield s.to_record()

    n = write_jsonl(args.out, rows())
    logger.info("wrote %d samples", n)
    write_manifest("augment", args, [args.annotated, args.ontology, args.templates], [args.out])


def _read_ids(path):
    ids = set()
    with open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                row = json.loads(line)
                if "format" in row:
                    continue
                ids.add(int(row.get("page_id", row.get("doc_id"))))
            else:
                ids.add(int(line))
    return ids


def cmd_split(args):
    require_inputs(args, ["train_ids", "eval_dump", "train_ontology", "samples", "train_samples"])
    outputs, inputs = [], []
    if args.eval_dump:
        if not (args.train_ids and args.out):
            raise StageError("--eval-dump needs --train-ids and --out")
        train_ids = _read_ids(args.train_ids)

        def rows():
            yield {"format": PARAGRAPH_FORMAT, "offsets": OFFSET_CONVENTION}
            with open_binary(args.eval_dump) as stream:
                for art in build_open_world_corpus(train_ids, parse_wikipedia_dump(stream)):
                    yield paragraph_from_article(art).to_dict()

        n = write_jsonl(args.out, rows()) - 1
        logger.info("open-world corpus: %d new articles", n)
        outputs.append(args.out)
        inputs += [args.train_ids, args.eval_dump]
    if args.samples:
        if not (args.train_ontology and args.partitions_out):
            raise StageError("--samples needs --train-ontology and --partitions-out")
        train = load_ontology(args.train_ontology)
        inventory = ParamInventory()
        if args.train_samples:
            for rec in read_jsonl(args.train_samples):
                inventory.add(InstructedSample.from_record(rec).spec)
        labels = (label_sample(InstructedSample.from_record(rec), train, inventory).to_dict()
                  for rec in read_jsonl(args.samples))
        write_jsonl(args.partitions_out, labels)
        outputs.append(args.partitions_out)
        inputs += [args.samples, args.train_ontology, args.train_samples]
    if not outputs:
        raise StageError("nothing to do: give --eval-dump and/or --samples")
    write_manifest("split", args, inputs, outputs)


def _eval_config(args) -> EvalConfig:
    thresholds = args.thresholds
    if isinstance(thresholds, str):
        thresholds = [float(t) for t in thresholds.split(",")]
    return EvalConfig(title_thresholds=tuple(thresholds), carb_match_threshold=args.carb_threshold,
                      rephrasing_runs=args.rephrasing_runs, strict=not args.lenient)


def cmd_score(args):
    require_inputs(args, ["gold", "pred", "partitions"])
    if not args.pred:
        raise StageError("at least one --pred file is required")
    config = _eval_config(args)
    gold = [InstructedSample.from_record(r) for r in read_jsonl(args.gold)]
    gold_ids = {s.sample_id for s in gold}
    labels = {}
    if args.partitions:
        labels = {r["sample_id"]: SampleLabels.from_dict(r) for r in read_jsonl(args.partitions)}
    runs, raw_runs = [], []
    for path in args.pred:
        outputs = {}
        for row in read_jsonl(path):
            sid = row["sample_id"]
            if sid not in gold_ids:
                raise StageError(f"{path}: prediction for unknown sample {sid!r}")
            outputs[sid] = row.get("output_text", row.get("output"))
        missing = len(gold_ids - set(outputs))
        if missing:
            logger.warning("%s: %d gold samples without prediction (scored as invalid)", path, missing)
        runs.append([score_sample(s, outputs.get(s.sample_id), config, labels.get(s.sample_id))
                     for s in gold])
        raw_runs.append(outputs)
    if len(runs) < config.rephrasing_runs:
        logger.warning("%d prediction run(s) given, %d rephrasing runs configured",
                       len(runs), config.rephrasing_runs)
    report = aggregate_report(runs, config, {s.sample_id: s.spec for s in gold}, raw_runs)
    with atomic_write(args.out) as fh:
        json.dump(report.to_dict(), fh, indent=1, ensure_ascii=False)
        fh.write("\n")
    write_manifest("score", args, [args.gold, args.partitions, *args.pred], [args.out])
    if report.self_check_failures:
        for f in report.self_check_failures:
            logger.error("self-check failed: %s", f)
        return 3
    return 0


def cmd_report(args):
    require_inputs(args, ["eval"])
    from .evaluate import EvalReport
    with open(args.eval, encoding="utf-8") as fh:
        report = EvalReport.from_dict(json.load(fh))
    tsv = os.path.join(args.out_dir, "report.tsv")
    md = os.path.join(args.out_dir, "report.md")
    with atomic_write(tsv) as fh:
        fh.write(to_tsv(report))
    with atomic_write(md) as fh:
        fh.write(to_markdown(report))
    write_manifest("report", args, [args.eval], [tsv, md])
    return 3 if report.self_check_failures else 0


def cmd_selfcheck(args):
    from .selfcheck import run_selfcheck
    results = run_selfcheck(args.seed if args.seed is not None else 0, args.instances)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file; [stage] tables set option defaults")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes per stage")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("ingest-wikidata", help="parse a Wikidata JSON dump into an ontology snapshot")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allowlist", help="file with one qid per line")
    p.add_argument("--snapshot-date", help="YYYY-MM-DD; defaults to the date in the dump filename")
    p.add_argument("--language", default="en")
    p.add_argument("--type-property", default="P31")
    p.add_argument("--hierarchy-property", default="P279")
    p.set_defaults(func=cmd_ingest_wikidata)

    p = sub.add_parser("ingest-wikipedia", help="extract lead paragraphs from a MediaWiki XML dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ids-out", help="also write the page ids seen in the dump")
    p.set_defaults(func=cmd_ingest_wikipedia)

    p = sub.add_parser("align", help="weak + distant supervision of lead paragraphs")
    p.add_argument("--ontology", required=True)
    p.add_argument("--paragraphs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("stats", help="corpus / ontology / density statistics as TSV")
    p.add_argument("--annotated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-ontology", help="count unseen mentions against this snapshot")
    p.add_argument("--split-name", default="Corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("augment", help="build instruction samples")
    p.add_argument("--annotated", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--templates", help="template TSV/JSONL (default: bundled seed templates)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("train", "eval"), default="train")
    p.add_argument("--cross", action=argparse.BooleanOptionalAction, default=True,
                   help="emit Number+type cross samples (eval mode only)")
    p.add_argument("--weights", help="category weights, e.g. BaseType=2,Number=1")
    p.add_argument("--max-arity", type=int, default=3)
    p.add_argument("--rephrasings", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="open-world corpus and seen/unseen partition sidecar")
    p.add_argument("--train-ids", help="training page ids (one per line, or paragraphs JSONL)")
    p.add_argument("--eval-dump", help="later MediaWiki XML dump")
    p.add_argument("--out", help="open-world corpus paragraphs JSONL")
    p.add_argument("--train-ontology")
    p.add_argument("--samples", help="evaluation samples to label")
    p.add_argument("--train-samples", help="training samples (instruction parameter inventory)")
    p.add_argument("--partitions-out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("score", help="score prediction files against gold samples")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", action="append", default=[], help="one file per rephrasing run")
    p.add_argument("--partitions")
    p.add_argument("--thresholds", default="1.0,0.8")
    p.add_argument("--carb-threshold", type=float, default=0.0)
    p.add_argument("--rephrasing-runs", type=int, default=3)
    p.add_argument("--lenient", action="store_true", help="lenient JSON schema validation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="render Markdown/TSV tables from a score file")
    p.add_argument("--eval", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selfcheck", help="run metric and serialization invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=2000)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def _config_defaults(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, "rb") as fh:
        cfg = tomllib.load(fh)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    top = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    parser.set_defaults(**top)
    for name, sp in subparsers.choices.items():
        values = dict(top)
        values.update({k.replace("-", "_"): v for k, v in cfg.get(name, {}).items()})
        known_dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in values.items() if k in known_dests})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    _config_defaults(parser, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except StageError as exc:
        print(f"forge {args.stage}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
