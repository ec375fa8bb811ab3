import pathlib

import pytest

from owforge.align import distant_supervise_relations, weak_supervise
from owforge.ontology import parse_wikidata_dump
from owforge.wikipedia import paragraph_from_article, parse_wikipedia_dump, resolve_anchor_targets

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
TRAIN_WIKIDATA = FIXTURES / "wikidata-20220530-all.json"
EVAL_WIKIDATA = FIXTURES / "wikidata-20230301-all.json"
TRAIN_WIKIPEDIA = FIXTURES / "enwiki-20220620-pages-articles.xml"
EVAL_WIKIPEDIA = FIXTURES / "enwiki-20230301-pages-articles.xml"

_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def load_ontology(path):
    with open(path, "rb") as fh:
        return parse_wikidata_dump(fh)


def annotate(xml_path, onto):
    with open(xml_path, "rb") as fh:
        articles = list(parse_wikipedia_dump(fh))
    docs = []
    for art in articles:
        para = resolve_anchor_targets(paragraph_from_article(art), onto.title_index)
        docs.append(distant_supervise_relations(weak_supervise(para, onto), onto))
    return docs


@pytest.fixture(scope="session")
def train_ontology():
    return load_ontology(TRAIN_WIKIDATA)


@pytest.fixture(scope="session")
def eval_ontology():
    return load_ontology(EVAL_WIKIDATA)


@pytest.fixture(scope="session")
def train_docs(train_ontology):
    return annotate(TRAIN_WIKIPEDIA, train_ontology)
