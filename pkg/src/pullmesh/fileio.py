"""File formats: clouds, meshes, poses, calibration, masks, losses, checkpoints.

Every parser validates the whole file and fails with a line or byte-offset
diagnostic; nothing is silently truncated or skipped.  Writers emit exactly
the documented layouts so that reads invert writes bit-for-bit where the
format permits.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import FRAME_WORLD, PointCloud
from .meshing import TriangleMesh, empty_mesh
from .network import PositionalEncoding, SdfNetwork
from .training import LossReport

CHECKPOINT_MAGIC = b"FSDF"
CHECKPOINT_VERSION = 1
LOSS_CSV_HEADER = "step,loss_self,loss_scc,loss_g_adv,loss_d,total_g,pos_count,neg_count"
MASK_PATTERN = "frame_%06d.pgm"

_FLOAT = "%.17g"


def _fail(path, line_no: int, message: str) -> None:
    raise InputError(f"{path}:{line_no}: {message}", stage="io")


def _open_text(path):
    try:
        return open(path, "r")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}", stage="io")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}", stage="io")


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}", stage="io")


def sha256_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- XYZ


def save_xyz(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="\n") as f:
        for x, y, z in cloud.points:
            f.write(f"{_FLOAT % x} {_FLOAT % y} {_FLOAT % z}\n")


def load_xyz(path) -> PointCloud:
    rows = []
    with _open_text(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                _fail(path, line_no, f"expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                _fail(path, line_no, f"bad coordinate: {exc}")
    if not rows:
        raise InputError(f"{path}: no points", stage="io")
    return PointCloud(np.array(rows, dtype=np.float64), frame=FRAME_WORLD)


# ---------------------------------------------------------------- PLY


def save_ply(path, vertices: np.ndarray, faces: np.ndarray | None = None, binary: bool = False) -> None:
    vertices = np.asarray(vertices, dtype=np.float32).reshape(-1, 3)
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(vertices)}")
    header += ["property float x", "property float y", "property float z"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
        header.append(f"element face {len(faces)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")
    if binary:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(vertices.astype("<f4").tobytes())
            if faces is not None:
                counts = np.full((len(faces), 1), 3, dtype=np.uint8)
                packed = np.empty(len(faces), dtype=[("n", "u1"), ("idx", "<i4", 3)])
                packed["n"] = counts[:, 0]
                packed["idx"] = faces.astype("<i4")
                f.write(packed.tobytes())
    else:
        with open(path, "w", newline="\n") as f:
            f.write("\n".join(header) + "\n")
            for x, y, z in vertices:
                f.write(f"{_FLOAT % x} {_FLOAT % y} {_FLOAT % z}\n")
            if faces is not None:
                for i, j, k in faces:
                    f.write(f"3 {i} {j} {k}\n")


def _parse_ply_header(path, data: bytes):
    end = data.find(b"end_header\n")
    if end < 0:
        raise InputError(f"{path}: missing end_header", stage="io")
    body_start = end + len(b"end_header\n")
    lines = data[:end].decode("ascii", errors="replace").split("\n")
    if not lines or lines[0].strip() != "ply":
        _fail(path, 1, "not a PLY file (missing 'ply' magic)")
    fmt = None
    n_vertex = None
    n_face = 0
    vertex_props: list[str] = []
    face_prop_ok = False
    current = None
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                _fail(path, line_no, f"unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                _fail(path, line_no, "malformed element line")
            current = parts[1]
            if current == "vertex":
                n_vertex = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
            else:
                _fail(path, line_no, f"unsupported element {current!r}")
        elif parts[0] == "property":
            if current == "vertex":
                if len(parts) != 3 or parts[1] != "float":
                    _fail(path, line_no, f"unsupported vertex property {line.strip()!r}")
                vertex_props.append(parts[2])
            elif current == "face":
                if parts[1:] not in (
                    ["list", "uchar", "int", "vertex_indices"],
                    ["list", "uint8", "int32", "vertex_indices"],
                ):
                    _fail(path, line_no, f"unsupported face property {line.strip()!r}")
                face_prop_ok = True
            else:
                _fail(path, line_no, "property before any element")
        else:
            _fail(path, line_no, f"unsupported header record {parts[0]!r}")
    if fmt is None or n_vertex is None:
        raise InputError(f"{path}: header missing format or vertex element", stage="io")
    if vertex_props != ["x", "y", "z"]:
        raise InputError(
            f"{path}: vertex properties must be exactly float x, y, z; got {vertex_props}",
            stage="io",
        )
    if n_face and not face_prop_ok:
        raise InputError(f"{path}: face element without vertex_indices list", stage="io")
    header_lines = data[:body_start].count(b"\n")
    return fmt, n_vertex, n_face, body_start, header_lines


def load_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a PLY file; returns (vertices, faces or None for a point cloud)."""
    data = _read_bytes(path)
    fmt, n_vertex, n_face, body_start, header_lines = _parse_ply_header(path, data)
    if fmt == "ascii":
        text = data[body_start:].decode("ascii", errors="replace").split("\n")
        rows = [t for t in text if t.strip()]
        if len(rows) != n_vertex + n_face:
            raise InputError(
                f"{path}: expected {n_vertex + n_face} body lines, found {len(rows)}",
                stage="io",
            )
        vertices = np.empty((n_vertex, 3), dtype=np.float64)
        for i in range(n_vertex):
            parts = rows[i].split()
            if len(parts) != 3:
                _fail(path, header_lines + 1 + i, "vertex line must have 3 values")
            try:
                vertices[i] = [float(p) for p in parts]
            except ValueError as exc:
                _fail(path, header_lines + 1 + i, f"bad vertex: {exc}")
        vertices = vertices.astype(np.float32).astype(np.float64)
        if n_face == 0:
            return vertices, None
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            parts = rows[n_vertex + i].split()
            if len(parts) != 4 or parts[0] != "3":
                _fail(path, header_lines + 1 + n_vertex + i, "only triangle faces are supported")
            faces[i] = [int(p) for p in parts[1:]]
        return vertices, faces
    body = data[body_start:]
    need = n_vertex * 12
    if len(body) < need:
        raise InputError(
            f"{path}: truncated at byte {body_start + len(body)}: "
            f"need {need} vertex bytes, have {len(body)}",
            stage="io",
        )
    vertices = (
        np.frombuffer(body[:need], dtype="<f4").reshape(n_vertex, 3).astype(np.float64)
    )
    if n_face == 0:
        if len(body) != need:
            raise InputError(f"{path}: {len(body) - need} trailing bytes after vertices", stage="io")
        return vertices, None
    face_bytes = body[need:]
    rec = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
    if len(face_bytes) != n_face * rec.itemsize:
        raise InputError(
            f"{path}: face block is {len(face_bytes)} bytes, expected {n_face * rec.itemsize}",
            stage="io",
        )
    packed = np.frombuffer(face_bytes, dtype=rec)
    if (packed["n"] != 3).any():
        bad = int(np.nonzero(packed["n"] != 3)[0][0])
        raise InputError(f"{path}: face {bad} has {packed['n'][bad]} indices; only triangles are supported", stage="io")
    return vertices, packed["idx"].astype(np.int64)


# ---------------------------------------------------------------- OBJ


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", newline="\n") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {_FLOAT % x} {_FLOAT % y} {_FLOAT % z}\n")
        for i, j, k in mesh.faces + 1:
            f.write(f"f {i} {j} {k}\n")


def load_obj(path) -> TriangleMesh:
    vertices = []
    faces = []
    with _open_text(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    _fail(path, line_no, "vertex requires exactly 3 coordinates")
                try:
                    vertices.append([float(p) for p in parts[1:]])
                except ValueError as exc:
                    _fail(path, line_no, f"bad vertex: {exc}")
            elif parts[0] == "f":
                if len(parts) != 4:
                    _fail(path, line_no, "only triangle faces are supported")
                idx = []
                for p in parts[1:]:
                    if "/" in p:
                        _fail(path, line_no, "texture/normal face indices are not supported")
                    try:
                        v = int(p)
                    except ValueError as exc:
                        _fail(path, line_no, f"bad face index: {exc}")
                    if v < 1:
                        _fail(path, line_no, f"face indices are 1-based, got {v}")
                    idx.append(v - 1)
                faces.append(idx)
            else:
                _fail(path, line_no, f"unsupported record {parts[0]!r}")
    if not vertices:
        return empty_mesh()
    return TriangleMesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(path, mesh: TriangleMesh, binary_ply: bool = False) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        save_obj(path, mesh)
    elif path.suffix.lower() == ".ply":
        save_ply(path, mesh.vertices, mesh.faces, binary=binary_ply)
    else:
        raise InputError(f"unsupported mesh format {path.suffix!r} (use .obj or .ply)", stage="io")


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file", stage="io")
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    if path.suffix.lower() == ".ply":
        vertices, faces = load_ply(path)
        if faces is None:
            raise InputError(f"{path}: PLY has no faces; not a mesh", stage="io")
        return TriangleMesh(vertices, faces)
    raise InputError(f"unsupported mesh format {path.suffix!r} (use .obj or .ply)", stage="io")


def save_cloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    if path.suffix.lower() == ".xyz":
        save_xyz(path, cloud)
    elif path.suffix.lower() == ".ply":
        save_ply(path, cloud.points, faces=None, binary=False)
    else:
        raise InputError(f"unsupported cloud format {path.suffix!r} (use .xyz or .ply)", stage="io")


def load_cloud(path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file", stage="io")
    if path.suffix.lower() == ".xyz":
        return load_xyz(path)
    if path.suffix.lower() == ".ply":
        vertices, _ = load_ply(path)
        if len(vertices) == 0:
            raise InputError(f"{path}: no points", stage="io")
        return PointCloud(vertices, frame=FRAME_WORLD)
    raise InputError(f"unsupported cloud format {path.suffix!r} (use .xyz or .ply)", stage="io")


# ---------------------------------------------------------------- poses and calibration


def save_poses(path, poses: np.ndarray) -> None:
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 4, 4)
    with open(path, "w", newline="\n") as f:
        for i, pose in enumerate(poses):
            row = ",".join(_FLOAT % v for v in pose.reshape(-1))
            f.write(f"{i},{row}\n")


def load_poses(path) -> np.ndarray:
    """Poses CSV: frame_index plus 16 row-major matrix entries per line.

    Rows may appear in any order; indices must be exactly 0..F-1."""
    entries: dict[int, np.ndarray] = {}
    with _open_text(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split(",")
            if len(parts) != 17:
                _fail(path, line_no, f"expected 17 fields, got {len(parts)}")
            try:
                idx = int(parts[0])
            except ValueError:
                _fail(path, line_no, f"bad frame index {parts[0]!r}")
            try:
                mat = np.array([float(p) for p in parts[1:]], dtype=np.float64).reshape(4, 4)
            except ValueError as exc:
                _fail(path, line_no, f"bad matrix entry: {exc}")
            if idx in entries:
                _fail(path, line_no, f"duplicate frame index {idx}")
            entries[idx] = mat
    if not entries:
        raise InputError(f"{path}: no poses", stage="io")
    indices = sorted(entries)
    if indices != list(range(len(indices))):
        raise InputError(
            f"{path}: frame indices must be contiguous from 0, got {indices[:8]}...",
            stage="io",
        )
    return np.stack([entries[i] for i in indices])


def save_calibration(path, calibration: np.ndarray) -> None:
    calibration = np.asarray(calibration, dtype=np.float64).reshape(4, 4)
    with open(path, "w", newline="\n") as f:
        f.write(" ".join(_FLOAT % v for v in calibration.reshape(-1)) + "\n")


def load_calibration(path) -> np.ndarray:
    text = _read_text(path)
    parts = text.split()
    if len(parts) != 16:
        raise InputError(f"{path}: calibration needs exactly 16 values, got {len(parts)}", stage="io")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise InputError(f"{path}: bad calibration value: {exc}", stage="io")
    return np.array(values, dtype=np.float64).reshape(4, 4)


# ---------------------------------------------------------------- PGM masks


def save_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise InputError(f"mask must be 2-d, got shape {image.shape}", stage="io")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255:
            raise InputError("mask values must fit 8 bits", stage="io")
        image = image.astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def load_pgm(path) -> np.ndarray:
    data = _read_bytes(path)
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated header at byte {start}", stage="io")
        return data[start:pos]

    if token() != b"P5":
        raise InputError(f"{path}: not a binary PGM (P5) file", stage="io")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise InputError(f"{path}: malformed PGM header near byte {pos}", stage="io")
    if maxval <= 0 or maxval > 255:
        raise InputError(f"{path}: only 8-bit PGM supported, maxval {maxval}", stage="io")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise InputError(
            f"{path}: pixel data truncated at byte {pos + len(body)}: need {w * h} bytes",
            stage="io",
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def save_mask_dir(directory, masks) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, mask in enumerate(masks):
        save_pgm(directory / (MASK_PATTERN % i), mask)


def load_mask_dir(directory) -> list[np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory}: no such mask directory", stage="io")
    pattern = re.compile(r"frame_(\d{6})\.pgm$")
    found = {}
    for entry in directory.iterdir():
        m = pattern.match(entry.name)
        if m:
            found[int(m.group(1))] = entry
    if not found:
        raise InputError(f"{directory}: no frame_NNNNNN.pgm masks found", stage="io")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        raise InputError(
            f"{directory}: mask indices must be contiguous from 0, got {indices[:8]}...",
            stage="io",
        )
    return [load_pgm(found[i]) for i in indices]


# ---------------------------------------------------------------- loss history CSV


def save_loss_history(path, reports: list[LossReport]) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(LOSS_CSV_HEADER + "\n")
        for r in reports:
            pos = "" if r.pos_count is None else str(r.pos_count)
            neg = "" if r.neg_count is None else str(r.neg_count)
            f.write(
                f"{r.step},{_FLOAT % r.loss_self},{_FLOAT % r.loss_scc},"
                f"{_FLOAT % r.loss_g_adv},{_FLOAT % r.loss_d},{_FLOAT % r.total_g},{pos},{neg}\n"
            )


def load_loss_history(path) -> list[LossReport]:
    reports = []
    with _open_text(path) as f:
        header = f.readline().rstrip("\n")
        if header != LOSS_CSV_HEADER:
            _fail(path, 1, f"bad header {header!r}")
        for line_no, line in enumerate(f, start=2):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split(",")
            if len(parts) != 8:
                _fail(path, line_no, f"expected 8 fields, got {len(parts)}")
            try:
                reports.append(
                    LossReport(
                        step=int(parts[0]),
                        loss_self=float(parts[1]),
                        loss_scc=float(parts[2]),
                        loss_g_adv=float(parts[3]),
                        loss_d=float(parts[4]),
                        total_g=float(parts[5]),
                        pos_count=int(parts[6]) if parts[6] else None,
                        neg_count=int(parts[7]) if parts[7] else None,
                    )
                )
            except ValueError as exc:
                _fail(path, line_no, f"bad loss row: {exc}")
    return reports


# ---------------------------------------------------------------- checkpoints

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, net: SdfNetwork, sidecar: dict) -> None:
    """Binary network container plus a JSON sidecar at ``path + '.json'``.

    Layout: magic, version, flags (encoding on/off), layer count, skip
    layer, encoding frequencies, beta, dtype code, then per layer the
    weight shape and raw little-endian weight and bias bytes.
    """
    path = Path(path)
    dtype = np.dtype(net.dtype)
    if dtype not in _DTYPE_CODES:
        raise InputError(f"cannot checkpoint dtype {dtype}", stage="io")
    enc = net.encoding
    # Encoding flag: 0 none, 1 with raw input columns, 2 frequencies only.
    enc_flag = 0 if enc is None else (1 if enc.include_input else 2)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(
            struct.pack(
                "<IIiiidB",
                CHECKPOINT_VERSION,
                net.n_layers,
                -1 if net.skip_layer is None else net.skip_layer,
                enc_flag,
                0 if enc is None else enc.num_frequencies,
                float(net.beta),
                _DTYPE_CODES[dtype],
            )
        )
        for w, b in zip(net.weights, net.biases):
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            f.write(np.ascontiguousarray(w, dtype=dtype.newbyteorder("<")).tobytes())
            f.write(np.ascontiguousarray(b, dtype=dtype.newbyteorder("<")).tobytes())
    with open(str(path) + ".json", "w", newline="\n") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[SdfNetwork, dict]:
    path = Path(path)
    data = _read_bytes(path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}", stage="io")
    head = struct.calcsize("<IIiiidB")
    if len(data) < 4 + head:
        raise InputError(f"{path}: truncated header at byte {len(data)}", stage="io")
    version, n_layers, skip, enc_flag, enc_freq, beta, dtype_code = struct.unpack(
        "<IIiiidB", data[4 : 4 + head]
    )
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported version {version}", stage="io")
    if dtype_code not in _CODE_DTYPES:
        raise InputError(f"{path}: unknown dtype code {dtype_code}", stage="io")
    dtype = _CODE_DTYPES[dtype_code]
    pos = 4 + head
    weights, biases = [], []
    for layer in range(n_layers):
        if len(data) < pos + 8:
            raise InputError(f"{path}: truncated at byte {pos} in layer {layer} shape", stage="io")
        rows, cols = struct.unpack("<II", data[pos : pos + 8])
        pos += 8
        wn = rows * cols * dtype.itemsize
        bn = rows * dtype.itemsize
        if len(data) < pos + wn + bn:
            raise InputError(f"{path}: truncated at byte {pos} in layer {layer} data", stage="io")
        weights.append(np.frombuffer(data[pos : pos + wn], dtype=dtype.newbyteorder("<")).reshape(rows, cols).astype(dtype))
        pos += wn
        biases.append(np.frombuffer(data[pos : pos + bn], dtype=dtype.newbyteorder("<")).astype(dtype))
        pos += bn
    if pos != len(data):
        raise InputError(f"{path}: {len(data) - pos} trailing bytes at offset {pos}", stage="io")
    if enc_flag == 0:
        encoding = None
    elif enc_flag in (1, 2):
        encoding = PositionalEncoding(num_frequencies=enc_freq, include_input=enc_flag == 1)
    else:
        raise InputError(f"{path}: unknown encoding flag {enc_flag}", stage="io")
    net = SdfNetwork(
        weights,
        biases,
        skip_layer=None if skip < 0 else skip,
        beta=beta,
        encoding=encoding,
    )
    sidecar_path = Path(str(path) + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return net, sidecar


# ---------------------------------------------------------------- JSON helpers


def save_json(path, payload: dict) -> None:
    with open(path, "w", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path) -> dict:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", stage="io")
