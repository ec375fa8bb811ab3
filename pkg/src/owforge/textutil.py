"""Small shared helpers: title normalization, compressed file access, atomic writes."""
import bz2
import gzip
import io
import os
import re
import tempfile
from contextlib import contextmanager

_SPACES = re.compile(r"[ _]+")


def normalize_title(title: str) -> str:
    """Canonical page-title form used for anchor lookup.

    Underscores become spaces, the ``#fragment`` is dropped and the first
    character is upper-cased, mirroring MediaWiki's own title rules.
    """
    title = title.split("#", 1)[0]
    title = _SPACES.sub(" ", title).strip()
    if not title:
        return ""
    return title[0].upper() + title[1:]


def open_binary(path):
    """Open a possibly gzip/bz2 compressed file for binary reading."""
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    if path.endswith(".bz2"):
        return bz2.open(path, "rb")
    return open(path, "rb")


def open_text(path):
    return io.TextIOWrapper(open_binary(path), encoding="utf-8")


@contextmanager
def atomic_write(path, mode="w"):
    """Write to a temporary sibling file and rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        if "b" in mode:
            fh = os.fdopen(fd, mode)
        else:
            fh = os.fdopen(fd, mode, encoding="utf-8", newline="\n")
        with fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
