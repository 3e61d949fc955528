"""Synthetic multi-label glyph scenes with controlled co-occurrence.

Each scene draws one or two "seed" classes; every seed may pull in partner
classes according to a co-occurrence table, and a pulled-in partner's
rotation is correlated with its seed's rotation. Glyphs sit in distinct
canvas quadrants. Everything is a pure function of (spec, index).
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctns
from .config import ConfigError

MANIFEST_HEADER = ("path", "labels")

# strokes in unit glyph coordinates: polylines, or ("ring", r) / ("disk", r)
GLYPHS = {
    0: ("bar", [[(-1.0, 0.0), (1.0, 0.0)]]),
    1: ("ring", 0.8),
    2: ("corner", [[(-0.6, 0.8), (-0.6, -0.6), (0.8, -0.6)]]),
    3: ("cross", [[(-1.0, 0.0), (1.0, 0.0)], [(0.0, -1.0), (0.0, 1.0)]]),
    4: ("triangle", [[(0.0, 0.95), (-0.82, -0.475), (0.82, -0.475), (0.0, 0.95)]]),
    5: ("square", [[(-0.7, -0.7), (0.7, -0.7), (0.7, 0.7), (-0.7, 0.7), (-0.7, -0.7)]]),
    6: ("tee", [[(-0.9, 0.7), (0.9, 0.7)], [(0.0, 0.7), (0.0, -0.9)]]),
    7: ("disk", 0.55),
}


class ManifestError(ValueError):
    pass


def _default_cooc():
    return ((0, 1, 0.8), (2, 3, 0.8), (4, 5, 0.8), (6, 7, 0.8))


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 8
    canvas: int = 36
    min_glyphs: int = 1
    max_glyphs: int = 4
    max_seeds: int = 2
    cooc: tuple = field(default_factory=_default_cooc)  # (source, target, P(target | source))
    coupling: float = 0.8
    rotation_std: float = 0.5
    glyph_radius: float = 6.0
    scale_min: float = 0.85
    scale_max: float = 1.15
    jitter: float = 2.0
    thickness: float = 1.4
    pixel_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.classes <= len(GLYPHS):
            raise ConfigError(f"classes must be in [1, {len(GLYPHS)}]")
        if not 1 <= self.min_glyphs <= self.max_glyphs <= 4:
            raise ConfigError("need 1 <= min_glyphs <= max_glyphs <= 4")
        if not -1.0 <= self.coupling <= 1.0:
            raise ConfigError("coupling must lie in [-1, 1]")
        if self.scale_min <= 0 or self.scale_max < self.scale_min:
            raise ConfigError("bad scale range")
        for src, dst, p in self.cooc:
            if not (0 <= src < self.classes and 0 <= dst < self.classes and src != dst):
                raise ConfigError(f"co-occurrence entry ({src}, {dst}) out of range")
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"co-occurrence probability {p} not in [0, 1]")
        pairs = [(src, dst) for src, dst, _ in self.cooc]
        if len(set(pairs)) != len(pairs):
            raise ConfigError("duplicate co-occurrence entry")
        if len(self.seed_pool()) < 1:
            raise ConfigError("every class is a co-occurrence target; no seed classes left")
        reach = self.glyph_radius * self.scale_max + self.jitter
        if self.canvas / 4.0 < reach:
            raise ConfigError(
                f"canvas {self.canvas} too small for glyph reach {reach:.2f} (needs canvas >= {4 * reach:.1f})"
            )

    def cooc_matrix(self) -> np.ndarray:
        m = np.zeros((self.classes, self.classes))
        for src, dst, p in self.cooc:
            m[src, dst] = p
        return m

    def seed_pool(self) -> list[int]:
        targets = {dst for _, dst, _ in self.cooc}
        return [c for c in range(self.classes) if c not in targets]


@dataclass
class Glyph:
    cls: int
    center: tuple
    rotation: float
    scale: float
    partner_of: int | None = None


@dataclass
class Scene:
    glyphs: list
    noise_seed: int

    @property
    def classes(self) -> list[int]:
        return sorted(g.cls for g in self.glyphs)


def sample_scene(spec: SynthSpec, index: int) -> Scene:
    rng = np.random.default_rng([spec.seed, index])
    pool = spec.seed_pool()
    cooc = spec.cooc_matrix()
    n_seeds = int(rng.integers(1, min(spec.max_seeds, len(pool)) + 1))
    seeds = rng.choice(pool, size=n_seeds, replace=False)
    chosen: list[tuple[int, float, int | None]] = []
    for s in seeds:
        chosen.append((int(s), float(rng.standard_normal()), None))
    for s, z_seed, _ in list(chosen):
        for dst in np.flatnonzero(cooc[s]):
            # draws happen unconditionally so the stream stays aligned across specs
            hit = rng.random() < cooc[s, dst]
            z_own = rng.standard_normal()
            if hit and len(chosen) < spec.max_glyphs and all(c != dst for c, _, _ in chosen):
                z = spec.coupling * z_seed + np.sqrt(1.0 - spec.coupling ** 2) * z_own
                chosen.append((int(dst), float(z), s))
    while len(chosen) < spec.min_glyphs:
        free = [c for c in pool if all(c != x for x, _, _ in chosen)]
        chosen.append((int(rng.choice(free)), float(rng.standard_normal()), None))
    quadrants = rng.permutation(4)[: len(chosen)]
    q = spec.canvas / 4.0
    glyphs = []
    for (cls, z, partner), quad in zip(chosen, quadrants):
        cy = q * (1 + 2 * (quad // 2)) + rng.uniform(-spec.jitter, spec.jitter)
        cx = q * (1 + 2 * (quad % 2)) + rng.uniform(-spec.jitter, spec.jitter)
        scale = rng.uniform(spec.scale_min, spec.scale_max)
        glyphs.append(Glyph(cls, (float(cy), float(cx)), spec.rotation_std * z, float(scale), partner))
    return Scene(glyphs, int(rng.integers(2 ** 31)))


def _segment_distance(py, px, a, b):
    ay, ax = a[1], a[0]
    by, bx = b[1], b[0]
    dy, dx = by - ay, bx - ax
    t = ((py - ay) * dy + (px - ax) * dx) / (dy * dy + dx * dx)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(py - (ay + t * dy), px - (ax + t * dx))


def render(spec: SynthSpec, scene: Scene) -> np.ndarray:
    """Rasterise a scene to an (H, W, 1) float32 image in [0, 1]."""
    n = spec.canvas
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    img = np.zeros((n, n))
    half = spec.thickness / 2.0
    for g in scene.glyphs:
        size = spec.glyph_radius * g.scale
        cos, sin = np.cos(g.rotation), np.sin(g.rotation)
        dy, dx = yy - g.center[0], xx - g.center[1]
        # glyph-local coordinates with +y pointing up
        lx = (cos * dx - sin * dy) / size
        ly = (-sin * dx - cos * dy) / size
        kind = GLYPHS[g.cls][1]
        if isinstance(kind, float):
            r = np.hypot(lx, ly)
            if GLYPHS[g.cls][0] == "disk":
                dist = np.maximum(r - kind, 0.0) * size
            else:
                dist = np.abs(r - kind) * size
        else:
            dist = np.full((n, n), np.inf)
            for line in kind:
                for a, b in zip(line[:-1], line[1:]):
                    dist = np.minimum(dist, _segment_distance(ly, lx, a, b) * size)
        img = np.maximum(img, np.clip(half + 0.5 - dist, 0.0, 1.0))
    if spec.pixel_noise > 0:
        noise_rng = np.random.default_rng(scene.noise_seed)
        img = img + noise_rng.normal(0.0, spec.pixel_noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)[:, :, None]


def multi_hot(classes, num_classes: int) -> np.ndarray:
    out = np.zeros(num_classes, dtype=np.float32)
    out[list(classes)] = 1.0
    return out


def generate_arrays(spec: SynthSpec, n: int, start: int = 0):
    images = np.stack([render(spec, sample_scene(spec, i)) for i in range(start, start + n)])
    labels = np.stack([multi_hot(sample_scene(spec, i).classes, spec.classes)
                       for i in range(start, start + n)])
    return images, labels


def synth_generate(spec: SynthSpec, n: int, out_dir) -> Path:
    """Write ``n`` CTNS images plus ``manifest.csv`` under ``out_dir``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        scene = sample_scene(spec, i)
        rel = f"images/{i:06d}.ctns"
        ctns.save_tensor(out / rel, render(spec, scene))
        rows.append((rel, scene.classes))
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rel, classes in rows:
            writer.writerow([rel, ";".join(str(c) for c in classes)])


def read_manifest(path, num_classes: int) -> list[tuple[Path, list[int]]]:
    """Parse and validate a manifest; paths are resolved against its directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        seen = set()
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"{path}: row {rowno}: expected 2 columns")
            rel, labels = row[0].strip(), row[1].strip()
            if rel in seen:
                raise ManifestError(f"{path}: row {rowno}: duplicate path {rel}")
            seen.add(rel)
            try:
                classes = [int(x) for x in labels.split(";") if x.strip() != ""]
            except ValueError:
                raise ManifestError(f"{path}: row {rowno}: bad class list {labels!r}") from None
            for c in classes:
                if not 0 <= c < num_classes:
                    raise ManifestError(
                        f"{path}: row {rowno}: class index {c} outside [0, {num_classes})")
            full = (base / rel) if not Path(rel).is_absolute() else Path(rel)
            if not full.is_file():
                raise ManifestError(f"{path}: row {rowno}: missing file {rel}")
            rows.append((full, classes))
    return rows


def load_dataset(path, num_classes: int):
    from .train import Dataset

    rows = read_manifest(path, num_classes)
    if not rows:
        raise ManifestError(f"{path}: no rows")
    images = np.stack([ctns.load_tensor(p) for p, _ in rows])
    labels = np.stack([multi_hot(c, num_classes) for _, c in rows])
    return Dataset(images, labels, [str(p) for p, _ in rows])


def parse_spec(text: str) -> SynthSpec:
    """``key = value`` lines; ``cooc`` takes ``src:dst:p`` entries separated by ';'."""
    kinds = {f.name: f.type for f in dataclasses.fields(SynthSpec)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key == "cooc":
                entries = []
                for item in filter(None, (s.strip() for s in value.split(";"))):
                    src, dst, p = item.split(":")
                    entries.append((int(src), int(dst), float(p)))
                values[key] = tuple(entries)
            elif kinds[key] == "int":
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return SynthSpec(**values)


def load_spec(path) -> SynthSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))
