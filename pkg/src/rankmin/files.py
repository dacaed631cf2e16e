"""Matrix, vector and operator-descriptor files.

Matrix files start with a ``# n m`` line followed by n comma-separated
rows.  Operator descriptors are JSON objects
``{"kind", "n", "m", "p", "seed"}`` with optional ``"indices"`` (row-major
flat positions in the n x m array, as a person would count them) or
``"block_sizes"``.  Observations of sampled kinds are ordered by
column-major position of the sampled entry, whatever the listing order;
written descriptors list indices in that order.  A dense operator may instead be a CSV file with a
``# n m`` header and p rows of n*m values.
"""

from __future__ import annotations

import json

import numpy as np

from .linops import (
    CompletionOperator,
    DCTOperator,
    DenseOperator,
    EnsembleSpec,
    generate,
)


class FileFormatError(ValueError):
    """Malformed input; the message names the file and line."""


def _fail(path, lineno, msg):
    where = f"{path}:{lineno}" if lineno else str(path)
    raise FileFormatError(f"{where}: {msg}")


def _header(path, line):
    parts = line.lstrip("#").split()
    if not line.startswith("#") or len(parts) != 2:
        _fail(path, 1, "expected header '# n m'")
    try:
        n, m = int(parts[0]), int(parts[1])
    except ValueError:
        _fail(path, 1, "header dimensions must be integers")
    if n < 1 or m < 1:
        _fail(path, 1, "header dimensions must be positive")
    return n, m


def _rows(path, lines, width, start):
    out = []
    for lineno, line in enumerate(lines, start):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            _fail(path, lineno, "non-numeric value")
        if len(vals) != width:
            _fail(path, lineno, f"expected {width} values, found {len(vals)}")
        out.append(vals)
    return np.array(out, dtype=float).reshape(len(out), width)


def _read_lines(path):
    try:
        with open(path) as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror}") from None


def write_matrix(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"# {X.shape[0]} {X.shape[1]}\n")
        for row in X:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix(path):
    lines = _read_lines(path)
    if not lines:
        _fail(path, 0, "empty file")
    n, m = _header(path, lines[0])
    X = _rows(path, lines[1:], m, 2)
    if X.shape[0] != n:
        _fail(path, len(lines), f"expected {n} rows, found {X.shape[0]}")
    return X


def read_vector(path):
    """One value per line; blank lines ignored."""
    vals = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            vals.append(float(line))
        except ValueError:
            _fail(path, lineno, f"not a number: {line.strip()!r}")
    if not vals:
        _fail(path, 0, "no values")
    return np.array(vals)


def write_vector(path, v):
    with open(path, "w") as fh:
        for x in np.asarray(v, dtype=float).ravel():
            fh.write(f"{x:.17g}\n")


def _row_major_to_vec(idx, n, m):
    idx = np.asarray(idx, dtype=np.int64)
    return (idx % m) * n + idx // m


def _vec_to_row_major(idx, n, m):
    idx = np.asarray(idx, dtype=np.int64)
    return (idx % n) * m + idx // n


def operator_from_descriptor(d, path="<descriptor>"):
    for key in ("kind", "n", "m", "p"):
        if key not in d:
            _fail(path, 0, f"missing key {key!r}")
    known = {"kind", "n", "m", "p", "seed", "indices", "block_sizes", "decay"}
    extra = set(d) - known
    if extra:
        _fail(path, 0, f"unknown key {sorted(extra)[0]!r}")
    kind, n, m, p = d["kind"], int(d["n"]), int(d["m"]), int(d["p"])
    try:
        if "indices" in d:
            if kind not in ("completion", "dct-subsampled"):
                _fail(path, 0, f"'indices' not valid for kind {kind!r}")
            idx = _row_major_to_vec(d["indices"], n, m)
            if idx.size != p:
                _fail(path, 0, f"p={p} but {idx.size} indices given")
            cls = CompletionOperator if kind == "completion" else DCTOperator
            return cls(idx, n, m)
        if "seed" not in d:
            _fail(path, 0, "need 'seed' or 'indices'")
        sizes = tuple(d["block_sizes"]) if "block_sizes" in d else None
        spec = EnsembleSpec(kind, n, m, p, seed=int(d["seed"]), decay=float(d.get("decay", 0.5)), block_sizes=sizes)
        return generate(spec)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, FileFormatError):
            raise
        _fail(path, 0, str(exc))


def descriptor_of(op, spec=None):
    """JSON-ready descriptor.

    Sampled kinds carry explicit indices; other kinds need the
    :class:`EnsembleSpec` they were generated from.
    """
    if spec is not None:
        d = {"kind": spec.kind, "n": spec.n, "m": spec.m, "p": spec.p, "seed": int(spec.seed)}
        if spec.kind == "correlated":
            d["decay"] = spec.decay
        if spec.block_sizes is not None:
            d["block_sizes"] = [int(s) for s in spec.block_sizes]
    elif isinstance(op, (CompletionOperator, DCTOperator)):
        d = {"kind": op.kind, "n": op.n, "m": op.m, "p": op.p}
    else:
        raise ValueError(f"a {op.kind} operator needs its EnsembleSpec (or a dense CSV) to be saved")
    if isinstance(op, (CompletionOperator, DCTOperator)):
        d["indices"] = _vec_to_row_major(op.indices, op.n, op.m).tolist()
    return d


def read_operator(path):
    """Load a JSON descriptor, or a dense CSV when the name ends in .csv."""
    if str(path).endswith(".csv"):
        lines = _read_lines(path)
        if not lines:
            _fail(path, 0, "empty file")
        n, m = _header(path, lines[0])
        A = _rows(path, lines[1:], n * m, 2)
        if A.shape[0] == 0:
            _fail(path, 0, "no operator rows")
        return DenseOperator(A, n, m)
    text = "\n".join(_read_lines(path))
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(path, exc.lineno, exc.msg)
    if not isinstance(d, dict):
        _fail(path, 1, "descriptor must be a JSON object")
    return operator_from_descriptor(d, path)


def write_operator(path, op, spec=None):
    if str(path).endswith(".csv"):
        A = op.to_dense()
        with open(path, "w") as fh:
            fh.write(f"# {op.n} {op.m}\n")
            for row in A:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return
    with open(path, "w") as fh:
        json.dump(descriptor_of(op, spec), fh)
        fh.write("\n")
