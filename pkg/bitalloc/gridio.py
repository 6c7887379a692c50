# bitalloc/gridio.py
"""
Text grid files shared by the step map, QP map, lambda scale, beta map and
per-block bits outputs.

Layout::

    TAG 1
    W H [extra header integers]
    H rows of W values

All writes go through :func:`atomic_write`, so a failed command never leaves
a partial file behind.
"""
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import GridFormatError, OutputError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    payload = data.encode('ascii') if isinstance(data, str) else data
    tmp_name = None
    try:
        fd, tmp_name = tempfile.mkstemp(dir=path.parent or '.', prefix=f'.{path.name}.', suffix='.tmp')
        with os.fdopen(fd, 'wb') as fh:
            fh.write(payload)
        umask = os.umask(0)
        os.umask(umask)
        # mkstemp creates 0600
        os.chmod(tmp_name, 0o666 & ~umask)
        os.replace(tmp_name, path)
    except OSError as exc:
        if tmp_name and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise OutputError(f"cannot write output ({exc.strerror or exc})", path) from exc
    logger.debug(f"wrote {len(payload)} bytes to {path}")


def format_value(value, kind):
    if kind == 'int':
        return str(int(value))
    return repr(float(value))


def format_grid(tag, header, values, kind='float'):
    """Render a 2-D array as grid text; ``header`` follows the W H pair."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("grid values must be 2-D")
    rows, cols = values.shape
    lines = [
        f"{tag} {FORMAT_VERSION}",
        " ".join(str(int(v)) for v in (cols, rows, *header)),
    ]
    for row in values:
        lines.append(" ".join(format_value(v, kind) for v in row))
    return "\n".join(lines) + "\n"


def parse_grid(text, tag, header_len=0, kind='float', path=None):
    """
    Parse grid text produced by :func:`format_grid`.

    Returns ``(extra_header, values)`` where ``extra_header`` is the tuple of
    integers after W H.
    """
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines or lines[0][0] != tag:
        found = lines[0][0] if lines else 'empty file'
        raise GridFormatError(f"expected {tag} file, found '{found}'", path)
    if len(lines[0]) != 2 or lines[0][1] != str(FORMAT_VERSION):
        raise GridFormatError(f"unsupported {tag} version", path)
    if len(lines) < 2 or len(lines[1]) != 2 + header_len:
        raise GridFormatError(f"{tag} header must hold {2 + header_len} integers", path)
    try:
        cols, rows, *extra = (int(tok) for tok in lines[1])
    except ValueError as exc:
        raise GridFormatError(f"non-integer {tag} header", path) from exc
    if cols < 1 or rows < 1:
        raise GridFormatError(f"{tag} grid must be at least 1x1", path)

    body = lines[2:]
    if len(body) != rows:
        raise GridFormatError(f"{tag} declares {rows} rows, found {len(body)}", path)
    dtype = np.int64 if kind == 'int' else np.float64
    values = np.empty((rows, cols), dtype=dtype)
    for r, tokens in enumerate(body):
        if len(tokens) != cols:
            raise GridFormatError(f"{tag} row {r} holds {len(tokens)} values, expected {cols}", path)
        try:
            values[r] = [int(t) if kind == 'int' else float(t) for t in tokens]
        except ValueError as exc:
            raise GridFormatError(f"bad value in {tag} row {r}", path) from exc
    if kind != 'int' and not np.all(np.isfinite(values)):
        raise GridFormatError(f"non-finite value in {tag} grid", path)
    return tuple(extra), values


def write_grid(path, tag, header, values, kind='float'):
    atomic_write(path, format_grid(tag, header, values, kind))


def read_grid(path, tag, header_len=0, kind='float'):
    try:
        text = Path(path).read_text(encoding='ascii')
    except FileNotFoundError as exc:
        raise GridFormatError("file not found", path) from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise GridFormatError(f"cannot read {tag} file ({exc})", path) from exc
    return parse_grid(text, tag, header_len, kind, path)
