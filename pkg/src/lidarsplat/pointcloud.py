"""Point-cloud container, PLY I/O, exact k-NN index, and chunked traversal.

PLY support covers ASCII and binary little-endian vertex elements with
float32 x/y/z, optional uint8 red/green/blue, optional float32 nx/ny/nz,
plus arbitrary extra scalar properties (skipped on load, writable for score
export). Colors live in [0, 1] in memory; 8-bit is the on-disk form.

PointCloud and NeighborIndex are immutable after construction; queries are
read-only and safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

UNIT_NORMAL_TOL = 1e-6


class PlyParseError(ValueError):
    """Raised when a PLY file is missing, malformed, or unsupported."""


@dataclass(frozen=True)
class PointCloud:
    """Registered metric-scale point cloud: positions plus optional colors/normals."""

    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if not np.isfinite(pos).all():
            bad = int(np.flatnonzero(~np.isfinite(pos).all(axis=1))[0])
            raise ValueError(f"non-finite position at vertex {bad}")
        object.__setattr__(self, "positions", pos)

        n = len(pos)
        if self.colors is not None:
            col = np.ascontiguousarray(self.colors, dtype=np.float64)
            if col.shape != (n, 3):
                raise ValueError(f"colors must be ({n}, 3), got {col.shape}")
            if col.size and (col.min() < -1e-9 or col.max() > 1.0 + 1e-9):
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", col)
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != (n, 3):
                raise ValueError(f"normals must be ({n}, 3), got {nrm.shape}")
            if nrm.size:
                lens = np.linalg.norm(nrm, axis=1)
                if np.any(np.abs(lens - 1.0) > UNIT_NORMAL_TOL):
                    bad = int(np.flatnonzero(np.abs(lens - 1.0) > UNIT_NORMAL_TOL)[0])
                    raise ValueError(f"normal at vertex {bad} is not unit length")
            object.__setattr__(self, "normals", nrm)

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def select(self, indices) -> "PointCloud":
        """Subset cloud at the given vertex indices (order preserved)."""
        idx = np.asarray(indices)
        return PointCloud(
            positions=self.positions[idx],
            colors=None if self.colors is None else self.colors[idx],
            normals=None if self.normals is None else self.normals[idx],
        )

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(positions=self.positions, colors=self.colors, normals=normals)


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

_PLY_NUMPY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def _parse_ply_header(raw: bytes, path: Path):
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyParseError(f"{path}: not a PLY file (missing ply magic or end_header)")
    header = raw[: end + len(b"end_header\n")]
    body = raw[len(header):]
    lines = header.decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # [(name, count, [(prop_name, prop_type), ...])]
    for line in lines[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2:
                raise PlyParseError(f"{path}: malformed format line")
            fmt = tokens[1]
            if fmt == "binary_big_endian":
                raise PlyParseError(f"{path}: unsupported endianness binary_big_endian")
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"{path}: unsupported format {fmt!r}")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyParseError(f"{path}: malformed element line {line!r}")
            try:
                count = int(tokens[2])
            except ValueError as exc:
                raise PlyParseError(f"{path}: bad element count in {line!r}") from exc
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyParseError(f"{path}: property before any element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[-1], "list"))
            else:
                if len(tokens) != 3:
                    raise PlyParseError(f"{path}: malformed property line {line!r}")
                elements[-1][2].append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
        else:
            raise PlyParseError(f"{path}: unrecognized header line {line!r}")
    if fmt is None:
        raise PlyParseError(f"{path}: missing format line")
    return fmt, elements, body


def load_pointcloud(path) -> PointCloud:
    """Load a PLY vertex cloud (ASCII or binary little-endian).

    Colors are populated iff red/green/blue exist (8-bit divided by 255);
    normals iff nx/ny/nz exist (renormalized on load).
    """
    path = Path(path)
    if not path.exists():
        raise PlyParseError(f"{path}: file does not exist")
    raw = path.read_bytes()
    fmt, elements, body = _parse_ply_header(raw, path)

    if not elements or elements[0][0] != "vertex":
        raise PlyParseError(f"{path}: first element must be 'vertex'")
    _, count, props = elements[0]
    names = [p[0] for p in props]
    for p, t in props:
        if t == "list":
            raise PlyParseError(f"{path}: list property {p!r} not supported on vertex")
        if t not in _PLY_NUMPY_TYPES:
            raise PlyParseError(f"{path}: unsupported property type {t!r} for {p!r}")
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise PlyParseError(f"{path}: vertex element lacks property {needed!r}")

    dtype = np.dtype([(p, _PLY_NUMPY_TYPES[t]) for p, t in props])
    if fmt == "binary_little_endian":
        nbytes = dtype.itemsize * count
        if len(body) < nbytes:
            raise PlyParseError(f"{path}: truncated vertex data ({len(body)} < {nbytes} bytes)")
        table = np.frombuffer(body[:nbytes], dtype=dtype, count=count)
    else:
        text = body.decode("ascii", errors="replace").split()
        want = count * len(props)
        if len(text) < want:
            raise PlyParseError(f"{path}: truncated vertex data ({len(text)} < {want} values)")
        try:
            flat = np.array(text[:want], dtype=np.float64).reshape(count, len(props))
        except ValueError as exc:
            raise PlyParseError(f"{path}: non-numeric vertex data") from exc
        table = np.empty(count, dtype=dtype)
        for i, (name, t) in enumerate(props):
            table[name] = flat[:, i].astype(_PLY_NUMPY_TYPES[t])

    pos = np.stack(
        [table["x"].astype(np.float64), table["y"].astype(np.float64), table["z"].astype(np.float64)],
        axis=1,
    )
    if not np.isfinite(pos).all():
        bad = int(np.flatnonzero(~np.isfinite(pos).all(axis=1))[0])
        raise PlyParseError(f"{path}: non-finite coordinate at vertex {bad}")

    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        chans = []
        for c in ("red", "green", "blue"):
            ctype = dict(props)[c]
            vals = table[c].astype(np.float64)
            if _PLY_NUMPY_TYPES[ctype] == "u1":
                vals = vals / 255.0
            chans.append(vals)
        colors = np.stack(chans, axis=1)

    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        nrm = np.stack([table[c].astype(np.float64) for c in ("nx", "ny", "nz")], axis=1)
        lens = np.linalg.norm(nrm, axis=1)
        if np.any(lens == 0.0) or not np.isfinite(lens).all():
            bad = int(np.flatnonzero((lens == 0.0) | ~np.isfinite(lens))[0])
            raise PlyParseError(f"{path}: degenerate normal at vertex {bad}")
        normals = nrm / lens[:, None]

    return PointCloud(positions=pos, colors=colors, normals=normals)


def save_pointcloud(
    cloud: PointCloud,
    path,
    binary: bool = True,
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a PLY; extra maps property names to per-vertex float arrays."""
    path = Path(path)
    n = cloud.count
    props: list[tuple[str, str, np.ndarray]] = []
    pos32 = cloud.positions.astype("<f4")
    for i, name in enumerate(("x", "y", "z")):
        props.append((name, "float", pos32[:, i]))
    if cloud.normals is not None:
        nrm32 = cloud.normals.astype("<f4")
        for i, name in enumerate(("nx", "ny", "nz")):
            props.append((name, "float", nrm32[:, i]))
    if cloud.colors is not None:
        col8 = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype("u1")
        for i, name in enumerate(("red", "green", "blue")):
            props.append((name, "uchar", col8[:, i]))
    for name, values in (extra or {}).items():
        values = np.asarray(values)
        if values.shape != (n,):
            raise ValueError(f"extra property {name!r} must have shape ({n},)")
        props.append((name, "float", values.astype("<f4")))

    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for name, t, _ in props]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=np.dtype([(name, col.dtype) for name, _, col in props]))
            for name, _, col in props:
                rec[name] = col
            fh.write(rec.tobytes())
        else:
            cols = [col for _, _, col in props]
            kinds = [t for _, t, _ in props]
            for i in range(n):
                cells = []
                for kind, col in zip(kinds, cols):
                    v = col[i]
                    cells.append(str(int(v)) if kind == "uchar" else repr(float(v)))
                fh.write((" ".join(cells) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Exact k-NN index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborIndex:
    """Exact Euclidean k-NN index over cloud positions (kd-tree backed).

    Queries return neighbors sorted by non-decreasing distance with ties
    broken by ascending vertex index, and never include the query vertex.
    """

    positions: np.ndarray
    tree: cKDTree = field(repr=False)
    k_default: int = 64

    @property
    def count(self) -> int:
        return len(self.positions)


def build_neighbor_index(cloud: PointCloud, k_default: int = 64) -> NeighborIndex:
    if cloud.count < 2:
        raise ValueError(f"neighbor index requires at least 2 points, got {cloud.count}")
    if k_default < 1:
        raise ValueError("k_default must be positive")
    return NeighborIndex(positions=cloud.positions, tree=cKDTree(cloud.positions), k_default=k_default)


def _resolve_boundary_tie(index: NeighborIndex, query_id: int, k: int) -> np.ndarray:
    """Gather every candidate at the k-th distance and re-rank by (d^2, id)."""
    pos = index.positions
    q = pos[query_id]
    d, _ = index.tree.query(q, k=min(index.count, k + 1))
    radius = float(np.max(d)) * (1.0 + 1e-9)
    cand = np.array(index.tree.query_ball_point(q, radius), dtype=np.int64)
    cand = cand[cand != query_id]
    d2 = ((pos[cand] - q) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))
    return cand[order[:k]]


def knn_rows(index: NeighborIndex, query_ids: np.ndarray, k: int) -> np.ndarray:
    """Exact k-NN for a batch of cloud vertices; shape (len(query_ids), k_eff).

    k_eff = min(k, N-1). Rows are per-query independent, so chunked and
    whole-cloud traversal produce bit-identical results.
    """
    if k < 1:
        raise ValueError("k must be positive")
    pos = index.positions
    n = index.count
    query_ids = np.asarray(query_ids, dtype=np.int64)
    if query_ids.size and (query_ids.min() < 0 or query_ids.max() >= n):
        raise IndexError(f"point id out of range [0, {n})")
    k_eff = min(k, n - 1)
    if query_ids.size == 0:
        return np.empty((0, k_eff), dtype=np.int64)

    # one extra beyond self + k so boundary ties are detectable
    m = min(n, k_eff + 2)
    _, idx = index.tree.query(pos[query_ids], k=m)
    idx = np.atleast_2d(idx)

    d2 = ((pos[idx] - pos[query_ids][:, None, :]) ** 2).sum(axis=2)
    d2[idx == query_ids[:, None]] = np.inf  # drop the query vertex itself
    order = np.lexsort((idx, d2), axis=1)
    idx_sorted = np.take_along_axis(idx, order, axis=1)
    d2_sorted = np.take_along_axis(d2, order, axis=1)

    out = idx_sorted[:, :k_eff].copy()
    if m - 1 > k_eff:
        ambiguous = d2_sorted[:, k_eff - 1] >= d2_sorted[:, k_eff]
        for row in np.flatnonzero(ambiguous):
            out[row] = _resolve_boundary_tie(index, int(query_ids[row]), k_eff)
    return out


def knn(index: NeighborIndex, point_id: int, k: int) -> np.ndarray:
    """Exact k nearest neighbors of one cloud vertex (excluding itself)."""
    if not 0 <= point_id < index.count:
        raise IndexError(f"point id {point_id} out of range [0, {index.count})")
    return knn_rows(index, np.array([point_id]), k)[0]


def nearest_point(index: NeighborIndex, queries: np.ndarray) -> np.ndarray:
    """Nearest cloud vertex for arbitrary query coordinates (min-id tie-break)."""
    pos = index.positions
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    m = min(index.count, 2)
    d, idx = index.tree.query(q, k=m)
    d = np.atleast_2d(d)
    idx = np.atleast_2d(idx)
    out = idx[:, 0].astype(np.int64)
    if m > 1:
        d2 = ((pos[idx] - q[:, None, :]) ** 2).sum(axis=2)
        for row in np.flatnonzero(d2[:, 0] >= d2[:, 1]):
            radius = float(np.sqrt(max(d2[row, 0], d2[row, 1]))) * (1.0 + 1e-9)
            cand = np.array(index.tree.query_ball_point(q[row], radius), dtype=np.int64)
            cd2 = ((pos[cand] - q[row]) ** 2).sum(axis=1)
            best = cd2 == cd2.min()
            out[row] = cand[best].min()
    return out


def chunk_iterate(cloud: PointCloud | int, chunk_size: int) -> Iterator[tuple[int, int]]:
    """Yield (start, stop) ranges partitioning [0, N) exactly once, in order.

    Chunking is a memory-control device only; per-point results must not
    depend on it (the neighbor index stays global).
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    n = cloud if isinstance(cloud, int) else cloud.count
    for start in range(0, n, chunk_size):
        yield start, min(start + chunk_size, n)
