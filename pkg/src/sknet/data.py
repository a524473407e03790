"""Point-cloud ingestion, synthetic shape generation, normalization, batching.

File formats are deliberately plain ASCII: xyz-csv (one ``x,y,z`` per line),
ASCII PLY (vertex element with x y z, optional nx ny nz normals and
red/green/blue uchar colors), and OFF (vertices consumed, faces ignored).
Coordinates are written with Python's shortest round-trip float formatting, so
a write/load cycle reproduces them bit-exactly (well past the documented nine
significant digits).

Dataset manifests are line-oriented text: a ``classes:`` header naming the
label set, then one ``<entry><TAB><label>`` per line where ``<entry>`` is
either a point file path or a synthetic recipe token
``synth:<shape>:<n_points>:<noise_sigma>:<seed>``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Union

import numpy as np

SYNTHETIC_SHAPES = ("sphere", "box", "cylinder", "torus")

MIN_CLOUD_POINTS = 16


class ParseError(ValueError):
    """Malformed point file or manifest; message carries file and line number."""


@dataclass
class PointCloud:
    """Coordinates (N, 3) with optional unit normals, class and per-point labels."""
    coords: np.ndarray
    normals: Optional[np.ndarray] = None
    class_label: Optional[int] = None
    point_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.coords.shape[0] < 1:
            raise ValueError(f"coords must be (N>=1, 3), got {self.coords.shape}")
        if not np.isfinite(self.coords).all():
            raise ValueError("coords contain non-finite values")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.coords.shape:
                raise ValueError(f"normals shape {self.normals.shape} != coords {self.coords.shape}")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if self.point_labels.shape != (self.coords.shape[0],):
                raise ValueError("point_labels length must match N")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


@dataclass
class DatasetManifest:
    """Entries (file path or synthetic recipe, class label) for one split."""
    entries: list  # list[tuple[str, int]]
    class_names: list
    split: str = "train"

    def __post_init__(self):
        for token, label in self.entries:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label {label} out of range for {len(self.class_names)} classes")


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def load_point_file(path: str, fmt: str = "auto") -> PointCloud:
    """Load a point cloud from xyz-csv, ASCII PLY, or OFF.

    ``fmt='auto'`` dispatches on the file extension. OFF meshes contribute
    vertices only. Raises :class:`ParseError` with a line number on malformed
    input.
    """
    if fmt == "auto":
        ext = os.path.splitext(path)[1].lower().lstrip(".")
        fmt = {"ply": "ply", "off": "off", "xyz": "xyz-csv", "csv": "xyz-csv"}.get(ext)
        if fmt is None:
            raise ParseError(f"{path}: cannot infer format from extension '.{ext}'")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if fmt == "xyz-csv":
        return _parse_xyz_csv(path, lines)
    if fmt == "ply":
        return _parse_ply(path, lines)
    if fmt == "off":
        return _parse_off(path, lines)
    raise ParseError(f"{path}: unsupported format '{fmt}'")


def _parse_xyz_csv(path: str, lines: Sequence[str]) -> PointCloud:
    rows = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"{path}:{i}: expected 'x,y,z', got {line!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{i}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    return PointCloud(np.array(rows))


def _parse_ply(path: str, lines: Sequence[str]) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}:1: missing 'ply' magic")
    n_vertex = None
    props: list = []
    in_vertex_element = False
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError(f"{path}:{i}: only ascii PLY is supported")
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertex = int(tok[2])
                except (IndexError, ValueError):
                    raise ParseError(f"{path}:{i}: bad element vertex line") from None
        elif tok[0] == "property" and in_vertex_element:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i
            break
    if n_vertex is None or body_start is None:
        raise ParseError(f"{path}: incomplete PLY header")
    for name in ("x", "y", "z"):
        if name not in props:
            raise ParseError(f"{path}: vertex element lacks '{name}' property")
    has_normals = all(n in props for n in ("nx", "ny", "nz"))
    col = {name: j for j, name in enumerate(props)}
    coords = np.empty((n_vertex, 3))
    normals = np.empty((n_vertex, 3)) if has_normals else None
    for v in range(n_vertex):
        lineno = body_start + 1 + v
        if lineno > len(lines):
            raise ParseError(f"{path}:{lineno}: expected {n_vertex} vertices, file ended")
        parts = lines[lineno - 1].split()
        if len(parts) < len(props):
            raise ParseError(f"{path}:{lineno}: expected {len(props)} values, got {len(parts)}")
        try:
            coords[v] = [float(parts[col[c]]) for c in ("x", "y", "z")]
            if has_normals:
                normals[v] = [float(parts[col[c]]) for c in ("nx", "ny", "nz")]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return PointCloud(coords, normals=normals)


def _parse_off(path: str, lines: Sequence[str]) -> PointCloud:
    if not lines:
        raise ParseError(f"{path}: empty file")
    first = lines[0].strip()
    if not first.startswith("OFF"):
        raise ParseError(f"{path}:1: missing 'OFF' magic")
    # counts may share the magic line ("OFF 8 6 0") or follow on the next one
    rest = first[3:].split()
    lineno = 1
    if len(rest) >= 2:
        counts = rest
    else:
        lineno = 2
        while lineno <= len(lines) and not lines[lineno - 1].split():
            lineno += 1
        if lineno > len(lines):
            raise ParseError(f"{path}: missing count line")
        counts = lines[lineno - 1].split()
    try:
        n_vertex = int(counts[0])
    except (IndexError, ValueError):
        raise ParseError(f"{path}:{lineno}: bad count line") from None
    coords = np.empty((n_vertex, 3))
    for v in range(n_vertex):
        ln = lineno + 1 + v
        if ln > len(lines):
            raise ParseError(f"{path}:{ln}: expected {n_vertex} vertices, file ended")
        parts = lines[ln - 1].split()
        if len(parts) < 3:
            raise ParseError(f"{path}:{ln}: expected 3 coordinates, got {len(parts)}")
        try:
            coords[v] = [float(p) for p in parts[:3]]
        except ValueError as exc:
            raise ParseError(f"{path}:{ln}: {exc}") from None
    return PointCloud(coords)


def write_ply(path: str, coords: np.ndarray, normals: Optional[np.ndarray] = None,
              colors: Optional[np.ndarray] = None) -> None:
    """Write an ASCII PLY file; colors are uint8 RGB rows when given."""
    coords = np.asarray(coords, dtype=np.float64)
    out = ["ply", "format ascii 1.0", f"element vertex {coords.shape[0]}",
           "property float x", "property float y", "property float z"]
    if normals is not None:
        out += ["property float nx", "property float ny", "property float nz"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.int64)
        out += ["property uchar red", "property uchar green", "property uchar blue"]
    out.append("end_header")
    for i in range(coords.shape[0]):
        parts = [_fmt(v) for v in coords[i]]
        if normals is not None:
            parts += [_fmt(v) for v in normals[i]]
        if colors is not None:
            parts += [str(int(v)) for v in colors[i]]
        out.append(" ".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def write_xyz_csv(path: str, coords: np.ndarray) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for row in coords:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

def generate_synthetic(shape: str, n_points: int, noise_sigma: float,
                       rng: np.random.Generator) -> PointCloud:
    """Uniform surface samples of a unit-scale primitive plus Gaussian jitter.

    Shapes: sphere (radius 1; parts = hemispheres), box (cube [-1,1]^3; parts =
    faces), cylinder (radius 1, height 2; parts = cap/cap/side), torus (radii
    0.7/0.3; parts = outer/inner). Normals are exact pre-jitter surface
    normals.
    """
    if n_points < MIN_CLOUD_POINTS:
        raise ValueError(f"n_points must be >= {MIN_CLOUD_POINTS}, got {n_points}")
    if shape == "sphere":
        v = rng.standard_normal((n_points, 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        coords = v / norms
        normals = coords.copy()
        labels = (coords[:, 2] < 0).astype(np.int64)
    elif shape == "box":
        face = rng.integers(0, 6, n_points)          # axis*2 + (0 neg | 1 pos)
        uv = rng.uniform(-1.0, 1.0, (n_points, 2))
        coords = np.empty((n_points, 3))
        normals = np.zeros((n_points, 3))
        axis = face // 2
        sign = np.where(face % 2 == 1, 1.0, -1.0)
        for a in range(3):
            m = axis == a
            others = [b for b in range(3) if b != a]
            coords[m, a] = sign[m]
            coords[m, others[0]] = uv[m, 0]
            coords[m, others[1]] = uv[m, 1]
            normals[m, a] = sign[m]
        labels = face.astype(np.int64)
    elif shape == "cylinder":
        # radius 1, z in [-1, 1]; areas: side 4*pi, each cap pi
        u = rng.random(n_points)
        side = u < 2.0 / 3.0
        top = (~side) & (u < 5.0 / 6.0)
        coords = np.empty((n_points, 3))
        normals = np.zeros((n_points, 3))
        phi = rng.uniform(0.0, 2.0 * math.pi, n_points)
        coords[side, 0] = np.cos(phi[side])
        coords[side, 1] = np.sin(phi[side])
        coords[side, 2] = rng.uniform(-1.0, 1.0, int(side.sum()))
        normals[side, 0] = coords[side, 0]
        normals[side, 1] = coords[side, 1]
        caps = ~side
        r = np.sqrt(rng.random(int(caps.sum())))
        coords[caps, 0] = r * np.cos(phi[caps])
        coords[caps, 1] = r * np.sin(phi[caps])
        coords[caps, 2] = np.where(top[caps], 1.0, -1.0)
        normals[caps, 2] = np.where(top[caps], 1.0, -1.0)
        labels = np.where(side, 2, np.where(top, 1, 0)).astype(np.int64)
    elif shape == "torus":
        big_r, small_r = 0.7, 0.3
        phi = rng.uniform(0.0, 2.0 * math.pi, n_points)
        theta = np.empty(n_points)
        # rejection sampling: surface density along the tube angle is
        # proportional to big_r + small_r*cos(theta)
        remaining = np.arange(n_points)
        while remaining.size:
            cand = rng.uniform(0.0, 2.0 * math.pi, remaining.size)
            accept = rng.random(remaining.size) <= (
                (big_r + small_r * np.cos(cand)) / (big_r + small_r))
            theta[remaining[accept]] = cand[accept]
            remaining = remaining[~accept]
        ring = big_r + small_r * np.cos(theta)
        coords = np.stack([ring * np.cos(phi), ring * np.sin(phi),
                           small_r * np.sin(theta)], axis=1)
        normals = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi),
                            np.sin(theta)], axis=1)
        labels = (np.cos(theta) < 0).astype(np.int64)
    else:
        raise ValueError(f"unknown synthetic shape {shape!r} (choose from {SYNTHETIC_SHAPES})")
    if noise_sigma > 0:
        coords = coords + noise_sigma * rng.standard_normal(coords.shape)
    return PointCloud(coords, normals=normals, point_labels=labels)


def normalize_unit_cube(pc: PointCloud) -> PointCloud:
    """Centroid-shift then scale uniformly by the max absolute coordinate.

    The result lies in [-1, 1] with at least one coordinate exactly +-1;
    degenerate zero-extent clouds map to the origin. Idempotent up to fp.
    """
    centered = pc.coords - pc.coords.mean(axis=0)
    extent = np.abs(centered).max()
    if extent < 1e-300:
        return replace(pc, coords=np.zeros_like(pc.coords))
    return replace(pc, coords=centered / extent)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentSpec:
    rotation_z: bool = False
    jitter_sigma: float = 0.0
    jitter_clip: float = 0.0
    dropout_ratio: float = 0.0


def augment(pc: PointCloud, spec: AugmentSpec, rng: np.random.Generator) -> PointCloud:
    """Optional z-rotation, clipped Gaussian jitter and random point removal.

    Point labels and normals stay in sync with the surviving points. Raises if
    dropout would leave fewer than 16 points.
    """
    if not 0.0 <= spec.dropout_ratio < 1.0:
        raise ValueError(f"dropout_ratio must be in [0, 1), got {spec.dropout_ratio}")
    coords, normals, labels = pc.coords, pc.normals, pc.point_labels
    if spec.rotation_z:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        coords = coords @ rot.T
        if normals is not None:
            normals = normals @ rot.T
    if spec.jitter_sigma > 0:
        jitter = spec.jitter_sigma * rng.standard_normal(coords.shape)
        if spec.jitter_clip > 0:
            jitter = np.clip(jitter, -spec.jitter_clip, spec.jitter_clip)
        coords = coords + jitter
    if spec.dropout_ratio > 0:
        keep_n = coords.shape[0] - int(round(spec.dropout_ratio * coords.shape[0]))
        if keep_n < MIN_CLOUD_POINTS:
            raise ValueError(f"dropout would leave {keep_n} < {MIN_CLOUD_POINTS} points")
        keep = np.sort(rng.choice(coords.shape[0], size=keep_n, replace=False))
        coords = coords[keep]
        normals = normals[keep] if normals is not None else None
        labels = labels[keep] if labels is not None else None
    return PointCloud(coords, normals=normals, class_label=pc.class_label,
                      point_labels=labels)


# ---------------------------------------------------------------------------
# Manifests and batching
# ---------------------------------------------------------------------------

def parse_recipe(token: str) -> tuple:
    """Split a ``synth:<shape>:<n>:<sigma>:<seed>`` token into its fields."""
    parts = token.split(":")
    if len(parts) != 5 or parts[0] != "synth":
        raise ParseError(f"bad synthetic recipe {token!r}")
    shape, n, sigma, seed = parts[1], int(parts[2]), float(parts[3]), int(parts[4])
    if shape not in SYNTHETIC_SHAPES:
        raise ParseError(f"bad synthetic recipe shape {shape!r}")
    return shape, n, sigma, seed


def resolve_entry(token: str, base_dir: str = "") -> PointCloud:
    """Materialize one manifest entry (file path or synthetic recipe)."""
    if token.startswith("synth:"):
        shape, n, sigma, seed = parse_recipe(token)
        return generate_synthetic(shape, n, sigma, np.random.default_rng(seed))
    path = token if os.path.isabs(token) or not base_dir else os.path.join(base_dir, token)
    return load_point_file(path)


def load_manifest(path: str, split: str = "train") -> DatasetManifest:
    entries = []
    class_names = None
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("classes:"):
                class_names = [c.strip() for c in line[len("classes:"):].split(",") if c.strip()]
                continue
            if line.startswith("split:"):
                split = line[len("split:"):].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{i}: expected 'entry<TAB>label', got {line!r}")
            try:
                entries.append((parts[0], int(parts[1])))
            except ValueError:
                raise ParseError(f"{path}:{i}: bad label {parts[1]!r}") from None
    if class_names is None:
        raise ParseError(f"{path}: missing 'classes:' header line")
    if not entries:
        raise ParseError(f"{path}: manifest has no entries")
    return DatasetManifest(entries, class_names, split=split)


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("classes:" + ",".join(manifest.class_names) + "\n")
        fh.write("split:" + manifest.split + "\n")
        for token, label in manifest.entries:
            fh.write(f"{token}\t{label}\n")


def load_dataset(manifest: DatasetManifest, base_dir: str = "",
                 normalize: bool = True) -> list:
    """Materialize every manifest entry, attaching class labels.

    Clouds are normalized into the unit cube by default; the separation loss
    threshold presumes that scale.
    """
    clouds = []
    for token, label in manifest.entries:
        pc = resolve_entry(token, base_dir)
        if normalize:
            pc = normalize_unit_cube(pc)
        clouds.append(replace(pc, class_label=label))
    return clouds


def synthetic_manifest(classes: Sequence[str], per_class: int, n_points: int,
                       noise_sigma: float, seed_start: int,
                       split: str = "train") -> DatasetManifest:
    """Manifest of synthetic recipe tokens: ``per_class`` clouds per shape.

    Entry seeds run consecutively from ``seed_start`` so train/test splits can
    be kept disjoint by spacing their seed ranges.
    """
    for c in classes:
        if c not in SYNTHETIC_SHAPES:
            raise ValueError(f"unknown synthetic class {c!r}")
    entries = []
    seed = seed_start
    for label, shape in enumerate(classes):
        for _ in range(per_class):
            entries.append((f"synth:{shape}:{n_points}:{noise_sigma}:{seed}", label))
            seed += 1
    return DatasetManifest(entries, list(classes), split=split)


@dataclass
class Batch:
    coords: np.ndarray                      # (B, N, 3) or (B, N, 6) with normals
    labels: np.ndarray                      # (B,) class labels
    point_labels: Optional[np.ndarray] = None  # (B, N) when every cloud has them


def batch_iterator(dataset: Union[DatasetManifest, Sequence[PointCloud]],
                   batch_size: int, n_points: int, shuffle: bool,
                   rng: np.random.Generator, with_normals: bool = False,
                   base_dir: str = "") -> Iterator[Batch]:
    """Yield batches with every cloud resampled to exactly ``n_points``.

    Clouds larger than ``n_points`` are subsampled without replacement,
    smaller ones with replacement; exact-size clouds pass through unchanged.
    The order and all resampling are deterministic given the rng state, and a
    final partial batch is emitted.
    """
    if isinstance(dataset, DatasetManifest):
        dataset = load_dataset(dataset, base_dir=base_dir)
    dataset = list(dataset)
    if not dataset:
        raise ValueError("batch_iterator: empty dataset")
    order = np.arange(len(dataset))
    if shuffle:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        coords = np.empty((len(chunk), n_points, 6 if with_normals else 3))
        labels = np.empty(len(chunk), dtype=np.int64)
        plabels = np.empty((len(chunk), n_points), dtype=np.int64)
        have_plabels = True
        for bi, ci in enumerate(chunk):
            pc = dataset[ci]
            n = pc.n_points
            if n == n_points:
                sel = np.arange(n)
            elif n > n_points:
                sel = rng.choice(n, size=n_points, replace=False)
            else:
                sel = rng.choice(n, size=n_points, replace=True)
            coords[bi, :, :3] = pc.coords[sel]
            if with_normals:
                if pc.normals is None:
                    raise ValueError("batch_iterator: with_normals requested but cloud has none")
                coords[bi, :, 3:] = pc.normals[sel]
            labels[bi] = -1 if pc.class_label is None else pc.class_label
            if pc.point_labels is None:
                have_plabels = False
            else:
                plabels[bi] = pc.point_labels[sel]
        yield Batch(coords, labels, plabels if have_plabels else None)
