"""Versioned JSON problem files.

A problem file is a JSON object::

    {
      "format": "qkdrate-problem",
      "version": 1,
      "field": "real" | "complex",
      "cones": [<cone>, ...],
      "c": [float, ...],
      "b": [float, ...],
      "A": {"shape": [m, n], "entries": [[row, col, value], ...]},
      "metadata": {...}
    }

Cones, in the order their coordinates appear in ``x``::

    {"kind": "nonneg", "dim": d}
    {"kind": "second_order", "dim": d}
    {"kind": "rel_entropy", "n": n}
    {"kind": "qkd", "n": n, "ghat": null | [<matrix>, ...], "zhat": [[<matrix>, ...], ...]}

``ghat`` is ``null`` for the identity map; ``zhat`` lists the Kraus operators of
each output block. Matrices are ``{"shape": [r, c], "re": [...], "im": [...]}``
with row-major entries; ``im`` is omitted for real matrices. Points of matrix
cones use the ``svec`` layout of :mod:`qkdrate.hermvec` in the file's field.

``A`` is stored as sorted coordinate triplets without zeros. :func:`dumps` emits
the canonical form (sorted keys, two-space indentation), so
``dumps(loads(text)) == text`` for canonical ``text``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import hermvec as hv
from .cones import NonnegCone, QKDCone, RelEntropyCone, SOCCone
from .solver import ConicProblem

FORMAT = "qkdrate-problem"
VERSION = 1


class ProblemFileError(ValueError):
    """Malformed problem file; ``line``/``column`` locate JSON syntax errors, ``path`` schema errors."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None, path: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        super().__init__(self.location() + message)

    def location(self) -> str:
        if self.line is not None:
            return f"line {self.line}, column {self.column}: "
        if self.path is not None:
            return f"at {self.path}: "
        return ""


# -- encoding ------------------------------------------------------------------


def _num(v) -> float:
    return float(v)


def _encode_matrix(K) -> dict:
    K = np.asarray(K)
    out = {"shape": list(K.shape), "re": [_num(v) for v in np.real(K).ravel()]}
    if np.iscomplexobj(K) and np.any(np.imag(K) != 0):
        out["im"] = [_num(v) for v in np.imag(K).ravel()]
    return out


def _encode_cone(cone) -> dict:
    if isinstance(cone, NonnegCone):
        return {"kind": "nonneg", "dim": cone.dim}
    if isinstance(cone, SOCCone):
        return {"kind": "second_order", "dim": cone.dim}
    if isinstance(cone, RelEntropyCone):
        return {"kind": "rel_entropy", "n": cone.n}
    if isinstance(cone, QKDCone):
        return {
            "kind": "qkd",
            "n": cone.n,
            "ghat": None if cone.ghat_is_identity else [_encode_matrix(K) for K in cone.ghat.ops],
            "zhat": [[_encode_matrix(K) for K in b.ops] for b in cone.zhat],
        }
    raise TypeError(f"cannot serialize cone {cone!r}")


def _field(problem: ConicProblem) -> str:
    cplx = any(getattr(k, "iscomplex", False) for k in problem.cones)
    return "complex" if cplx else "real"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def to_document(problem: ConicProblem) -> dict:
    A = np.asarray(problem.A, dtype=float)
    rows, cols = np.nonzero(A)
    return {
        "format": FORMAT,
        "version": VERSION,
        "field": _field(problem),
        "cones": [_encode_cone(k) for k in problem.cones],
        "c": [_num(v) for v in problem.c],
        "b": [_num(v) for v in problem.b],
        "A": {
            "shape": list(A.shape),
            "entries": [[int(i), int(j), _num(A[i, j])] for i, j in zip(rows, cols)],
        },
        "metadata": _jsonable(problem.metadata),
    }


def dumps(problem: ConicProblem) -> str:
    return json.dumps(to_document(problem), sort_keys=True, indent=2, allow_nan=False) + "\n"


def dump(problem: ConicProblem, path) -> None:
    Path(path).write_text(dumps(problem))


# -- decoding ------------------------------------------------------------------


def _expect(cond, message, path):
    if not cond:
        raise ProblemFileError(message, path=path)


def _get(obj: dict, key: str, path: str):
    _expect(isinstance(obj, dict), "expected an object", path)
    _expect(key in obj, f"missing field {key!r}", path)
    return obj[key]


def _int(v, path, minimum=0) -> int:
    _expect(isinstance(v, int) and not isinstance(v, bool) and v >= minimum, f"expected an integer >= {minimum}", path)
    return v


def _floats(v, path, length=None) -> np.ndarray:
    _expect(isinstance(v, list), "expected a list of numbers", path)
    for i, x in enumerate(v):
        _expect(isinstance(x, (int, float)) and not isinstance(x, bool), "expected a number", f"{path}[{i}]")
    arr = np.asarray(v, dtype=float)
    _expect(np.all(np.isfinite(arr)), "numbers must be finite", path)
    if length is not None:
        _expect(arr.shape == (length,), f"expected {length} numbers, got {arr.shape[0]}", path)
    return arr


def _decode_matrix(obj, path, iscomplex):
    shape = _get(obj, "shape", path)
    _expect(isinstance(shape, list) and len(shape) == 2, "shape must be [rows, cols]", path + ".shape")
    r = _int(shape[0], path + ".shape[0]", 1)
    c = _int(shape[1], path + ".shape[1]", 1)
    re = _floats(_get(obj, "re", path), path + ".re", r * c).reshape(r, c)
    if "im" in obj:
        _expect(iscomplex, "imaginary parts need field 'complex'", path + ".im")
        return re + 1j * _floats(obj["im"], path + ".im", r * c).reshape(r, c)
    return re.astype(complex) if iscomplex else re


def _decode_cone(obj, path, iscomplex):
    kind = _get(obj, "kind", path)
    if kind == "nonneg":
        return NonnegCone(_int(_get(obj, "dim", path), path + ".dim", 1))
    if kind == "second_order":
        return SOCCone(_int(_get(obj, "dim", path), path + ".dim", 2))
    if kind == "rel_entropy":
        return RelEntropyCone(_int(_get(obj, "n", path), path + ".n", 1), iscomplex)
    if kind == "qkd":
        n = _int(_get(obj, "n", path), path + ".n", 1)
        g = _get(obj, "ghat", path)
        if g is None:
            ghat = hv.KrausMap.identity(n)
        else:
            _expect(isinstance(g, list) and g, "ghat must be null or a non-empty list", path + ".ghat")
            ghat = hv.KrausMap([_decode_matrix(K, f"{path}.ghat[{i}]", iscomplex) for i, K in enumerate(g)])
        z = _get(obj, "zhat", path)
        _expect(isinstance(z, list) and z, "zhat must be a non-empty list of blocks", path + ".zhat")
        blocks = []
        for bi, ops in enumerate(z):
            bp = f"{path}.zhat[{bi}]"
            _expect(isinstance(ops, list) and ops, "a block needs at least one Kraus operator", bp)
            blocks.append(hv.KrausMap([_decode_matrix(K, f"{bp}[{i}]", iscomplex) for i, K in enumerate(ops)]))
        try:
            cone = QKDCone(ghat, blocks, iscomplex)
        except ValueError as exc:
            raise ProblemFileError(str(exc), path=path) from None
        _expect(cone.n == n, f"Kraus operators act on dimension {cone.n}, not {n}", path + ".n")
        return cone
    raise ProblemFileError(f"unknown cone kind {kind!r}", path=path + ".kind")


def from_document(doc) -> ConicProblem:
    _expect(isinstance(doc, dict), "top level must be an object", "$")
    fmt = _get(doc, "format", "$")
    _expect(fmt == FORMAT, f"format must be {FORMAT!r}", "$.format")
    version = _get(doc, "version", "$")
    _expect(version == VERSION, f"unsupported version {version!r} (this reader handles {VERSION})", "$.version")
    field = _get(doc, "field", "$")
    _expect(field in ("real", "complex"), "field must be 'real' or 'complex'", "$.field")
    iscomplex = field == "complex"
    cones_doc = _get(doc, "cones", "$")
    _expect(isinstance(cones_doc, list) and cones_doc, "cones must be a non-empty list", "$.cones")
    cones = [_decode_cone(k, f"$.cones[{i}]", iscomplex) for i, k in enumerate(cones_doc)]
    n = sum(k.dim for k in cones)
    c = _floats(_get(doc, "c", "$"), "$.c", n)
    b = _floats(_get(doc, "b", "$"), "$.b")
    Adoc = _get(doc, "A", "$")
    shape = _get(Adoc, "shape", "$.A")
    _expect(shape == [b.shape[0], n], f"A must have shape [{b.shape[0]}, {n}]", "$.A.shape")
    A = np.zeros((b.shape[0], n))
    entries = _get(Adoc, "entries", "$.A")
    _expect(isinstance(entries, list), "entries must be a list of [row, col, value]", "$.A.entries")
    for t, e in enumerate(entries):
        p = f"$.A.entries[{t}]"
        _expect(isinstance(e, list) and len(e) == 3, "expected [row, col, value]", p)
        i = _int(e[0], p + "[0]")
        j = _int(e[1], p + "[1]")
        _expect(i < A.shape[0] and j < A.shape[1], "index out of range", p)
        A[i, j] = _floats([e[2]], p + "[2]")[0]
    meta = doc.get("metadata", {})
    _expect(isinstance(meta, dict), "metadata must be an object", "$.metadata")
    return ConicProblem(c, A, b, cones, meta)


def loads(text: str) -> ConicProblem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return from_document(doc)


def load(path) -> ConicProblem:
    return loads(Path(path).read_text())


__all__ = ["FORMAT", "VERSION", "ProblemFileError", "dump", "dumps", "from_document", "load", "loads", "to_document"]
