"""File formats.

Point files
    One point per line, 2 or 3 whitespace-separated numbers; ``#`` starts a
    comment.  The dimension is taken from the first data line.  ``.ply`` files
    (ASCII or binary little-endian) are read for the vertex x/y/z properties.

SVM model and mixture files
    A ``#`` header of ``key value`` lines followed by one row per component,
    ``alpha x y [z]`` for SVM models and ``phi x y [z]`` for mixtures::

        # svreg svm-model 1
        # dim 2
        # gamma 0.5
        # rho 0.1234
        # nu 0.01
        # columns alpha x y
        0.25 1.0 2.0

    Numbers are written with 17 significant digits so they round-trip exactly.

Registration results
    JSON with ``schema_version``, the rotation (``angle`` or ``quaternion``
    w, x, y, z), ``translation``, ``final_objective``, ``converged`` and the
    per-round trace.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .ocsvm import SvmModel
from .pointset import PointSet, RigidTransform
from .registration import RegistrationResult, RoundRecord
from .svgm import Svgm

PathLike = Union[str, os.PathLike]
SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# points

def parse_text_points(text: str) -> np.ndarray:
    rows = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if dim is None:
            dim = len(fields)
            if dim not in (2, 3):
                raise FormatError(f"line {lineno}: expected 2 or 3 fields, got {dim}")
        elif len(fields) != dim:
            raise FormatError(f"line {lineno}: expected {dim} fields, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise FormatError("no points found")
    return np.array(rows)


def format_text_points(points) -> str:
    pts = np.asarray(points, dtype=float)
    return "".join(" ".join(_fmt(v) for v in row) + "\n" for row in pts)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh) -> Tuple[str, List[Tuple[str, int, list]]]:
    if fh.readline().strip() != b"ply":
        raise FormatError("not a PLY file")
    fmt = None
    elements: List[Tuple[str, int, list]] = []
    while True:
        line = fh.readline()
        if not line:
            raise FormatError("PLY header not terminated")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError("PLY property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", tok[2], tok[3]))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path: PathLike) -> np.ndarray:
    """Vertex x, y, z of an ASCII or binary little-endian PLY file."""
    try:
        return _read_ply(path)
    except FormatError:
        raise
    except (ValueError, IndexError, KeyError) as exc:
        raise FormatError(f"{path}: malformed PLY ({exc})") from None


def _read_ply(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        if fmt == "ascii":
            tokens = fh.read().decode("ascii").split()
            pos = 0
            for name, count, props in elements:
                if name != "vertex":
                    for _ in range(count):
                        for p in props:
                            if p[1] == "list":
                                pos += int(tokens[pos]) + 1
                            else:
                                pos += 1
                    continue
                if any(p[1] == "list" for p in props):
                    raise FormatError("list properties on vertices are not supported")
                names = [p[0] for p in props]
                block = np.array(tokens[pos:pos + count * len(props)], dtype=float)
                block = block.reshape(count, len(props))
                return _xyz(block, names)
            raise FormatError("PLY file has no vertex element")

        data = fh.read()
    pos = 0
    for name, count, props in elements:
        if any(p[1] == "list" for p in props):
            if name == "vertex":
                raise FormatError("list properties on vertices are not supported")
            for _ in range(count):
                for p in props:
                    if p[1] == "list":
                        ct = np.dtype("<" + _PLY_TYPES[p[2]])
                        it = np.dtype("<" + _PLY_TYPES[p[3]])
                        k = int(np.frombuffer(data, ct, 1, pos)[0])
                        pos += ct.itemsize + k * it.itemsize
                    else:
                        pos += np.dtype(_PLY_TYPES[p[1]]).itemsize
            continue
        dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
        if name == "vertex":
            rec = np.frombuffer(data, dt, count, pos)
            names = [p[0] for p in props]
            return _xyz(np.column_stack([rec[n].astype(float) for n in names]), names)
        pos += dt.itemsize * count
    raise FormatError("PLY file has no vertex element")


def _xyz(block, names):
    try:
        cols = [names.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise FormatError("PLY vertices need x, y and z properties") from None
    return block[:, cols]


def write_ply(path: PathLike, points, binary: bool = True) -> None:
    pts = np.asarray(points, dtype=float)
    if pts.shape[1] != 3:
        raise ValueError("PLY output needs 3D points")
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {len(pts)}", "property double x", "property double y",
            "property double z", "end_header"]
    header = ("\n".join(head) + "\n").encode("ascii")
    if binary:
        atomic_write(path, header + pts.astype("<f8").tobytes())
    else:
        atomic_write(path, header.decode() + format_text_points(pts))


def read_points(path: PathLike) -> PointSet:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return PointSet(read_ply(path))
    return PointSet(parse_text_points(path.read_text()))


def write_points(path: PathLike, ps) -> None:
    path = Path(path)
    pts = np.asarray(ps.points if isinstance(ps, PointSet) else ps)
    if path.suffix.lower() == ".ply":
        write_ply(path, pts)
    else:
        atomic_write(path, format_text_points(pts))


# --------------------------------------------------------------------------
# tabular model files

def _format_table(kind: str, header: Dict[str, object], first: str, weights, coords) -> str:
    dim = coords.shape[1]
    lines = [f"# svreg {kind} {SCHEMA_VERSION}", f"# dim {dim}"]
    for key, value in header.items():
        if value is None:
            continue
        if np.ndim(value):
            lines.append(f"# {key} " + " ".join(_fmt(v) for v in np.ravel(value)))
        else:
            lines.append(f"# {key} {_fmt(value)}")
    lines.append(f"# columns {first} " + " ".join("xyz"[:dim]))
    for w, row in zip(weights, coords):
        lines.append(" ".join([_fmt(w)] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def _parse_table(text: str, kind: str):
    header: Dict[str, List[str]] = {}
    rows = []
    lines = text.splitlines()
    if not lines or lines[0].split()[:3] != ["#", "svreg", kind]:
        raise FormatError(f"not an svreg {kind} file")
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            tok = line[1:].split()
            if tok:
                header[tok[0]] = tok[1:]
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    try:
        dim = int(header["dim"][0])
    except (KeyError, IndexError, ValueError):
        raise FormatError("missing dim header") from None
    if not rows or any(len(r) != dim + 1 for r in rows):
        raise FormatError(f"expected non-empty rows of {dim + 1} numbers")
    return header, np.array(rows, dtype=float)


def _scalar(header, key, default=None):
    if key not in header:
        if default is not None:
            return default
        raise FormatError(f"missing {key} header")
    return float(header[key][0])


def format_svm_model(model: SvmModel) -> str:
    return _format_table("svm-model",
                         {"gamma": model.gamma, "rho": model.rho, "nu": model.nu},
                         "alpha", model.alphas, model.support_vectors)


def parse_svm_model(text: str) -> SvmModel:
    header, table = _parse_table(text, "svm-model")
    return SvmModel(support_vectors=table[:, 1:], alphas=table[:, 0],
                    rho=_scalar(header, "rho"), gamma=_scalar(header, "gamma"),
                    nu=_scalar(header, "nu", float("nan")))


def format_svgm(g: Svgm) -> str:
    return _format_table("svgm",
                         {"variance": g.variance, "bias_weight": g.bias_weight,
                          "bias_variance": g.bias_variance, "bias_mean": g.bias_mean},
                         "phi", g.weights, g.means)


def parse_svgm(text: str) -> Svgm:
    header, table = _parse_table(text, "svgm")
    bias_mean = header.get("bias_mean")
    return Svgm(
        means=table[:, 1:],
        variance=_scalar(header, "variance"),
        weights=table[:, 0],
        bias_weight=float(header["bias_weight"][0]) if "bias_weight" in header else None,
        bias_variance=float(header["bias_variance"][0]) if "bias_variance" in header else None,
        bias_mean=np.array(bias_mean, dtype=float) if bias_mean else None,
    )


def save_svm_model(path: PathLike, model: SvmModel) -> None:
    atomic_write(path, format_svm_model(model))


def load_svm_model(path: PathLike) -> SvmModel:
    return parse_svm_model(Path(path).read_text())


def save_svgm(path: PathLike, g: Svgm) -> None:
    atomic_write(path, format_svgm(g))


def load_svgm(path: PathLike) -> Svgm:
    return parse_svgm(Path(path).read_text())


def is_svgm_file(path: PathLike) -> bool:
    with open(path, "rb") as fh:
        return fh.readline().split()[:3] == [b"#", b"svreg", b"svgm"]


# --------------------------------------------------------------------------
# transforms and registration results

def transform_to_dict(T: RigidTransform) -> dict:
    rot = {"angle": float(T.rotation)} if T.dim == 2 else \
        {"quaternion": [float(v) for v in T.rotation]}
    return {"dim": T.dim, "rotation": rot, "translation": [float(v) for v in T.translation]}


def transform_from_dict(d: dict) -> RigidTransform:
    rot = d["rotation"]
    if "angle" in rot:
        return RigidTransform(rot["angle"], d["translation"])
    return RigidTransform(rot["quaternion"], d["translation"])


def result_to_dict(result: RegistrationResult) -> dict:
    d = {"schema_version": SCHEMA_VERSION, "kind": "registration"}
    d.update(transform_to_dict(result.theta_star))
    d["final_objective"] = float(result.final_objective)
    d["converged"] = bool(result.converged)
    d["rounds"] = [
        {"gamma": r.gamma, "m": r.m, "n": r.n, "iterations": r.iterations,
         "status": r.status, "seconds": r.seconds, "trace": [float(v) for v in r.trace]}
        for r in result.rounds
    ]
    return d


def result_from_dict(d: dict) -> RegistrationResult:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {d.get('schema_version')!r}")
    rounds = [RoundRecord(gamma=r["gamma"], m=r["m"], n=r["n"], iterations=r["iterations"],
                          trace=list(r["trace"]), status=r["status"],
                          seconds=r.get("seconds", 0.0))
              for r in d.get("rounds", [])]
    return RegistrationResult(theta_star=transform_from_dict(d),
                              final_objective=d["final_objective"],
                              rounds=rounds, converged=d["converged"])


def save_result(path: PathLike, result: RegistrationResult) -> None:
    atomic_write(path, json.dumps(result_to_dict(result), indent=2) + "\n")


def _load_json(path: PathLike) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported or missing schema_version")
    return d


def load_result(path: PathLike) -> RegistrationResult:
    d = _load_json(path)
    try:
        return result_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing field {exc}") from None


def save_transform(path: PathLike, T: RigidTransform) -> None:
    d = {"schema_version": SCHEMA_VERSION, "kind": "transform"}
    d.update(transform_to_dict(T))
    atomic_write(path, json.dumps(d, indent=2) + "\n")


def load_transform(path: PathLike) -> RigidTransform:
    d = _load_json(path)
    try:
        return transform_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
