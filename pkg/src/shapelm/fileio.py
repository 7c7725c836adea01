"""OBJ, PLY and XYZ readers and writers.

PLY support covers ASCII and binary little-endian files. Vertex elements may
carry ``x y z`` (float or double), ``nx ny nz`` and a scalar ``quality``
property; face elements carry the index list and optionally ``nx ny nz`` for
a per-face normal field. Other elements are skipped.
"""

from pathlib import Path

import numpy as np

from .errors import MeshIOError, ParseError
from .mesh import TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _format_of(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".").lower()
    if fmt not in ("obj", "ply"):
        raise ParseError(f"unsupported mesh format {fmt!r}")
    return fmt


# ---------------------------------------------------------------- PLY ----

def _parse_ply_header(fh):
    first = fh.readline().strip()
    if first != b"ply":
        raise ParseError("missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise ParseError("unterminated PLY header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element")
            try:
                if tok[1] == "list":
                    prop = (tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])
                else:
                    prop = (tok[2], "scalar", _PLY_TYPES[tok[1]], None)
            except (KeyError, IndexError) as exc:
                raise ParseError(f"bad property line: {line!r}") from exc
            elements[-1]["props"].append(prop)
        elif tok[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header line: {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_binary_element(buf, offset, el):
    props = el["props"]
    count = el["count"]
    if all(kind == "scalar" for _, kind, _, _ in props):
        dt = np.dtype([(name, "<" + t) for name, _, t, _ in props])
        end = offset + dt.itemsize * count
        if end > len(buf):
            raise ParseError(f"truncated element {el['name']!r}")
        return np.frombuffer(buf, dtype=dt, count=count, offset=offset), end
    # Fast path: a single triangle list, i.e. every count byte equals 3.
    lists = [p for p in props if p[1] == "list"]
    if len(lists) == 1:
        fields = []
        for name, kind, t, it in props:
            if kind == "list":
                fields += [("__count", "<" + t), (name, "<" + it, (3,))]
            else:
                fields.append((name, "<" + t))
        dt = np.dtype(fields)
        end = offset + dt.itemsize * count
        if end <= len(buf):
            rows = np.frombuffer(buf, dtype=dt, count=count, offset=offset)
            if np.all(rows["__count"] == 3):
                return rows, end
    raise ParseError(f"element {el['name']!r} has non-triangular lists")


def _read_ascii_element(lines, el):
    props = el["props"]
    out = {name: [] for name, *_ in props}
    for _ in range(el["count"]):
        try:
            tok = next(lines).split()
        except StopIteration:
            raise ParseError(f"truncated element {el['name']!r}") from None
        pos = 0
        for name, kind, t, it in props:
            if kind == "list":
                k = int(tok[pos])
                out[name].append([float(x) for x in tok[pos + 1:pos + 1 + k]])
                pos += 1 + k
            else:
                out[name].append(float(tok[pos]))
                pos += 1
    result = {}
    for name, kind, t, it in props:
        if kind == "list":
            if any(len(r) != 3 for r in out[name]):
                raise ParseError(f"element {el['name']!r} has non-triangular lists")
            result[name] = np.array(out[name], dtype=it).reshape(-1, 3)
        else:
            result[name] = np.array(out[name], dtype=t)
    return result


def read_ply(path):
    """Read a PLY file into ``{element name: {property name: array}}``."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = iter(ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip())
        for el in elements:
            try:
                data[el["name"]] = _read_ascii_element(lines, el)
            except ValueError as exc:
                raise ParseError(str(exc)) from exc
    else:
        offset = 0
        for el in elements:
            rows, offset = _read_binary_element(body, offset, el)
            data[el["name"]] = {name: np.array(rows[name]) for name, *_ in el["props"]}
    return data


def _xyz(props, prefix=""):
    keys = [prefix + c for c in ("x", "y", "z")]
    if not all(k in props for k in keys):
        return None
    return np.column_stack([np.asarray(props[k], dtype=np.float64) for k in keys])


def _face_indices(props):
    for key in ("vertex_indices", "vertex_index"):
        if key in props:
            return np.asarray(props[key], dtype=np.int64).reshape(-1, 3)
    raise ParseError("face element without vertex_indices")


def write_ply(path, vertices, faces=None, vertex_props=None, face_props=None, binary=True):
    """Write a PLY file; all float properties are stored as double."""
    vertices = np.asarray(vertices, dtype=np.float64)
    vertex_props = dict(vertex_props or {})
    face_props = dict(face_props or {})
    vcols = [("x", vertices[:, 0]), ("y", vertices[:, 1]), ("z", vertices[:, 2])]
    vcols += [(k, np.asarray(v, dtype=np.float64)) for k, v in vertex_props.items()]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(vertices)}"]
    header += [f"property double {k}" for k, _ in vcols]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64)
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
        header += [f"property double {k}" for k in face_props]
    header.append("end_header")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            if binary:
                vdt = np.dtype([(k, "<f8") for k, _ in vcols])
                rows = np.empty(len(vertices), dtype=vdt)
                for k, col in vcols:
                    rows[k] = col
                fh.write(rows.tobytes())
                if faces is not None:
                    fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))]
                                   + [(k, "<f8") for k in face_props])
                    frows = np.empty(len(faces), dtype=fdt)
                    frows["n"] = 3
                    frows["idx"] = faces
                    for k, col in face_props.items():
                        frows[k] = col
                    fh.write(frows.tobytes())
            else:
                vmat = np.column_stack([c for _, c in vcols])
                for row in vmat:
                    fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode())
                if faces is not None:
                    fcols = [np.asarray(v, dtype=np.float64) for v in face_props.values()]
                    for i, f in enumerate(faces):
                        extra = "".join(" " + repr(float(c[i])) for c in fcols)
                        fh.write(f"3 {f[0]} {f[1]} {f[2]}{extra}\n".encode())
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- OBJ ----

def _read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(x) for x in tok[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs three coordinates")
                elif tok[0] == "f":
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                    if len(idx) != 3:
                        raise ValueError("only triangular faces are supported")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not verts or not faces:
        raise ParseError(f"{path}: no vertices or faces")
    return np.array(verts), np.array(faces, dtype=np.int64)


def _write_obj(path, mesh):
    try:
        with open(path, "w", encoding="ascii") as fh:
            np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
            np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------- public ----

def load_mesh_data(path, format=None):
    """Load a mesh together with any per-vertex and per-face fields.

    Returns
    -------
    mesh : TriMesh
    fields : dict
        May contain ``"quality"`` (per-vertex scalar), ``"normals"``
        (per-vertex) and ``"face_normals"`` (per-face).
    """
    fmt = _format_of(path, format)
    fields = {}
    if fmt == "obj":
        V, F = _read_obj(path)
    else:
        data = read_ply(path)
        if "vertex" not in data or "face" not in data:
            raise ParseError(f"{path}: PLY needs vertex and face elements")
        V = _xyz(data["vertex"])
        if V is None:
            raise ParseError(f"{path}: vertex element lacks x/y/z")
        F = _face_indices(data["face"])
        if "quality" in data["vertex"]:
            fields["quality"] = np.asarray(data["vertex"]["quality"], dtype=np.float64)
        vn = _xyz(data["vertex"], "n")
        if vn is not None:
            fields["normals"] = vn
        fn = _xyz(data["face"], "n")
        if fn is not None:
            fields["face_normals"] = fn
    return TriMesh(V, F), fields


def load_mesh(path, format=None):
    """Read an OBJ or PLY triangle mesh.

    Raises
    ------
    ParseError
        Malformed file or non-triangular faces.
    TopologyError
        Non-manifold edges or inconsistent orientation.
    """
    return load_mesh_data(path, format)[0]


def save_mesh(mesh, path, scalars=None, format=None, normals=None, face_normals=None,
              binary=True):
    """Write ``mesh``; optional fields require PLY.

    ``scalars`` becomes the per-vertex ``quality`` property, ``normals`` the
    per-vertex ``nx ny nz`` and ``face_normals`` per-face ``nx ny nz``.
    """
    fmt = _format_of(path, format)
    if fmt == "obj":
        if scalars is not None or normals is not None or face_normals is not None:
            raise ValueError("per-vertex or per-face fields need the PLY format")
        _write_obj(path, mesh)
        return
    vprops = {}
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        vprops.update(nx=normals[:, 0], ny=normals[:, 1], nz=normals[:, 2])
    if scalars is not None:
        scalars = np.asarray(scalars, dtype=np.float64)
        if scalars.shape != (mesh.n_vertices,):
            raise ValueError("scalar field must have one value per vertex")
        vprops["quality"] = scalars
    fprops = {}
    if face_normals is not None:
        face_normals = np.asarray(face_normals, dtype=np.float64)
        fprops.update(nx=face_normals[:, 0], ny=face_normals[:, 1], nz=face_normals[:, 2])
    write_ply(path, mesh.vertices, mesh.faces, vprops, fprops, binary=binary)


def load_point_cloud(path):
    """Read points (and normals when present) from PLY or XYZ text.

    Returns
    -------
    points : ndarray, shape (N, 3)
    normals : ndarray, shape (N, 3) or None
    """
    if Path(path).suffix.lower() == ".ply":
        data = read_ply(path)
        if "vertex" not in data:
            raise ParseError(f"{path}: no vertex element")
        pts = _xyz(data["vertex"])
        if pts is None:
            raise ParseError(f"{path}: vertex element lacks x/y/z")
        return pts, _xyz(data["vertex"], "n")
    try:
        arr = np.loadtxt(path, ndmin=2, comments="#")
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if arr.shape[1] not in (3, 6):
        raise ParseError(f"{path}: expected 3 or 6 columns, got {arr.shape[1]}")
    return arr[:, :3].copy(), (arr[:, 3:].copy() if arr.shape[1] == 6 else None)


def save_point_cloud(path, points, normals=None):
    points = np.asarray(points, dtype=np.float64)
    if Path(path).suffix.lower() == ".ply":
        props = {}
        if normals is not None:
            props = dict(nx=normals[:, 0], ny=normals[:, 1], nz=normals[:, 2])
        write_ply(path, points, None, props)
        return
    data = points if normals is None else np.column_stack([points, normals])
    try:
        np.savetxt(path, data, fmt="%.17g")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


def save_vertex_field(path, values):
    """Plain text, one value per line."""
    try:
        np.savetxt(path, np.asarray(values, dtype=np.float64), fmt="%.17g")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc
