"""STL ingestion, per-triangle centroids, and z-axis slicing.

Input geometry is a triangulated surface in STL format (binary or ASCII),
with coordinates interpreted as millimeters.  The mesh is reduced to the
cloud of triangle centers of gravity, which is then binned into thin
z-slices for the downstream per-slice ellipse fits.

JSON schemas (used for pipeline checkpointing):

``CentroidCloud``::

    {"schema": "centroid_cloud/1", "count": N, "points": [[x, y, z], ...]}

``SliceSet``::

    {"schema": "slice_set/1", "delta_z": f, "z_origin": f, "n_max": N,
     "bins": [{"n": 0, "points": [[x, y], ...]}, ...]}
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_BINARY_HEADER_LEN = 80
_FACET_DTYPE = np.dtype([
    ("normal", "<f4", (3,)),
    ("vertices", "<f4", (3, 3)),
    ("attr", "<u2"),
])


class StlParseError(ValueError):
    """Malformed STL content: truncated, inconsistent, or unparseable."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Triangulated surface: ``vertices`` is (n, 3, 3) in mm, one row of
    three 3D corners per triangle.  Stored normals are kept for round-trip
    fidelity but never used in computation (centroids depend only on the
    vertices, and file normals are frequently wrong in the wild)."""

    vertices: np.ndarray
    normals: np.ndarray
    source_format: str

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        n = np.asarray(self.normals, dtype=np.float64)
        if v.ndim != 3 or v.shape[1:] != (3, 3):
            raise ValueError(f"vertices must have shape (n, 3, 3), got {v.shape}")
        if n.shape != (v.shape[0], 3):
            raise ValueError(f"normals must have shape ({v.shape[0]}, 3), got {n.shape}")
        if v.shape[0] < 1:
            raise ValueError("mesh must contain at least one triangle")
        if not np.isfinite(v).all():
            raise ValueError("mesh contains non-finite vertex coordinates")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "normals", _readonly(n))

    @property
    def n_triangles(self) -> int:
        return self.vertices.shape[0]

    def translated(self, offset) -> "TriangleMesh":
        off = np.asarray(offset, dtype=np.float64).reshape(1, 1, 3)
        return TriangleMesh(self.vertices + off, self.normals, self.source_format)


@dataclass(frozen=True)
class CentroidCloud:
    """Per-triangle centers of gravity, one (x, y, z) point per triangle."""

    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("centroid cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _readonly(p))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def to_dict(self) -> dict:
        return {
            "schema": "centroid_cloud/1",
            "count": self.count,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CentroidCloud":
        cloud = cls(np.asarray(d["points"], dtype=np.float64))
        if "count" in d and int(d["count"]) != cloud.count:
            raise ValueError("count field disagrees with number of points")
        return cloud


@dataclass(frozen=True)
class SliceBin:
    """Points of one z-slice, projected to the xy plane (z discarded)."""

    n: int
    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", _readonly(p))

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SliceSet:
    """Contiguous z-slices of a centroid cloud.

    Bin ``n`` holds exactly the points with ``n*delta_z < z - z_origin <=
    (n+1)*delta_z``; bin 0 additionally includes points exactly at the
    origin (closed below), so the ear-entrance boundary point is never
    dropped.  Empty interior bins are retained so the index n maps
    linearly to depth.
    """

    delta_z: float
    z_origin: float
    bins: tuple

    @property
    def n_max(self) -> int:
        return len(self.bins) - 1

    def to_dict(self) -> dict:
        return {
            "schema": "slice_set/1",
            "delta_z": self.delta_z,
            "z_origin": self.z_origin,
            "n_max": self.n_max,
            "bins": [{"n": b.n, "points": b.points.tolist()} for b in self.bins],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SliceSet":
        bins = tuple(
            SliceBin(int(b["n"]), np.asarray(b["points"], dtype=np.float64).reshape(-1, 2))
            for b in d["bins"]
        )
        return cls(float(d["delta_z"]), float(d["z_origin"]), bins)


def _parse_ascii_stl(data: bytes) -> TriangleMesh:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise StlParseError(f"ASCII STL contains non-ASCII bytes: {exc}") from None
    tokens = text.split()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise StlParseError("truncated ASCII STL: unexpected end of file")
        tok = tokens[pos]
        pos += 1
        return tok

    def take_float() -> float:
        tok = take()
        try:
            return float(tok)
        except ValueError:
            raise StlParseError(f"expected a number in ASCII STL, got {tok!r}") from None

    def expect(*words: str) -> None:
        for w in words:
            tok = take()
            if tok.lower() != w:
                raise StlParseError(f"expected {w!r} in ASCII STL, got {tok!r}")

    expect("solid")
    # solid name: arbitrary tokens up to the first facet (or endsolid)
    while pos < len(tokens) and tokens[pos].lower() not in ("facet", "endsolid"):
        pos += 1

    tris = []
    norms = []
    while True:
        tok = take().lower()
        if tok == "endsolid":
            break
        if tok != "facet":
            raise StlParseError(f"expected 'facet' or 'endsolid', got {tok!r}")
        expect("normal")
        norms.append([take_float() for _ in range(3)])
        expect("outer", "loop")
        tri = []
        for _ in range(3):
            expect("vertex")
            tri.append([take_float() for _ in range(3)])
        tris.append(tri)
        expect("endloop", "endfacet")

    if not tris:
        raise StlParseError("ASCII STL contains no facets")
    return TriangleMesh(np.asarray(tris), np.asarray(norms), "ascii_stl")


def _parse_binary_stl(data: bytes) -> TriangleMesh:
    if len(data) < _BINARY_HEADER_LEN + 4:
        raise StlParseError(
            f"truncated binary STL: {len(data)} bytes, need at least {_BINARY_HEADER_LEN + 4}"
        )
    (count,) = struct.unpack_from("<I", data, _BINARY_HEADER_LEN)
    expected = _BINARY_HEADER_LEN + 4 + _FACET_DTYPE.itemsize * count
    if len(data) != expected:
        raise StlParseError(
            f"binary STL declares {count} triangles ({expected} bytes) "
            f"but file holds {len(data)} bytes"
        )
    if count == 0:
        raise StlParseError("binary STL contains no facets")
    rec = np.frombuffer(data, dtype=_FACET_DTYPE, count=count, offset=_BINARY_HEADER_LEN + 4)
    return TriangleMesh(rec["vertices"], rec["normal"], "binary_stl")


def parse_stl(data: bytes) -> TriangleMesh:
    """Parse STL file content, auto-detecting binary vs ASCII.

    Coordinates are taken as millimeters with no rescaling.  Binary and
    ASCII encodings of the same geometry parse to the same triangle set.
    Raises :class:`StlParseError` on truncation, a triangle count that
    disagrees with the payload length, or non-numeric ASCII tokens.
    """
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("parse_stl expects raw file bytes")
    data = bytes(data)
    head = data.lstrip()[:5].lower()
    # binary files may legally start with 'solid' inside the 80-byte header,
    # so 'solid' alone is not enough -- require ASCII structure words too.
    if head == b"solid" and (b"facet" in data or b"endsolid" in data):
        return _parse_ascii_stl(data)
    return _parse_binary_stl(data)


def write_binary_stl(mesh: TriangleMesh, header: bytes = b"earcanal binary STL") -> bytes:
    """Serialize a mesh as binary STL (little-endian, 50-byte facets).

    Parsing the output yields a triangle multiset identical to ``mesh``
    up to float32 storage precision (exact round trip for meshes that
    were themselves parsed from binary STL).
    """
    if header[:5].lower() == b"solid":
        raise ValueError("binary STL header must not start with 'solid'")
    rec = np.zeros(mesh.n_triangles, dtype=_FACET_DTYPE)
    rec["normal"] = mesh.normals.astype("<f4")
    rec["vertices"] = mesh.vertices.astype("<f4")
    return header.ljust(_BINARY_HEADER_LEN, b"\0") + struct.pack("<I", mesh.n_triangles) + rec.tobytes()


def triangle_centroids(mesh: TriangleMesh) -> CentroidCloud:
    """Arithmetic mean of each triangle's three vertices."""
    return CentroidCloud(mesh.vertices.mean(axis=1))


def slice_centroids(cloud: CentroidCloud, delta_z: float, z_origin: float | None = None) -> SliceSet:
    """Bin centroid points into thin z-slices of width ``delta_z``.

    Each point lands in the bin ``n`` with ``n*delta_z < z - z_origin <=
    (n+1)*delta_z`` (bin 0 is closed below).  ``z_origin`` defaults to the
    minimum z of the cloud, the ear-entrance end; an explicit value must
    not exceed that minimum, since slicing indexes depth from the entrance.
    """
    if delta_z <= 0:
        raise ValueError(f"delta_z must be positive, got {delta_z}")
    if cloud.count == 0:
        raise ValueError("cannot slice an empty centroid cloud")
    z = cloud.points[:, 2]
    zmin = float(z.min())
    if z_origin is None:
        z_origin = zmin
    elif z_origin > zmin:
        raise ValueError(
            f"z_origin {z_origin} exceeds the minimum cloud z {zmin}; "
            "slicing must start at the ear-entrance end"
        )
    rel = z - z_origin
    idx = np.ceil(rel / delta_z).astype(np.int64) - 1
    idx[idx < 0] = 0  # points exactly at the origin belong to bin 0
    n_max = int(idx.max())
    xy = cloud.points[:, :2]
    bins = tuple(SliceBin(n, xy[idx == n]) for n in range(n_max + 1))
    return SliceSet(float(delta_z), float(z_origin), bins)
