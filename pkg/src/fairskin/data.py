"""Labeled image corpus: synthetic generation, external ingestion, splits.

Every sample is a triplet of a single-channel image in [0, 1], a race
label, and a disease label.  The synthetic generator encodes the race as a
background intensity band and the disease as an overlaid geometric pattern
family, so an independent template-matching decoder can recover both
labels from pixels alone.  That decoder is the ground-truth oracle used to
judge whether a trained generator actually respects its conditioning.
"""

from __future__ import annotations

import csv
import enum
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCorpusError, IngestionError, PreconditionError
from .numerics import Rng


class Race(enum.Enum):
    ASIAN = "asian"
    AFRICAN = "african"
    CAUCASIAN = "caucasian"


class Disease(enum.Enum):
    ALLERGIC_CONTACT_DERMATITIS = "acd"
    BASAL_CELL_CARCINOMA = "bcc"
    LICHEN_PLANUS = "lp"
    PSORIASIS = "pso"
    SQUAMOUS_CELL_CARCINOMA = "scc"


RACES: tuple[Race, ...] = tuple(Race)
DISEASES: tuple[Disease, ...] = tuple(Disease)
CLASSES: tuple[tuple[Race, Disease], ...] = tuple((r, d) for r in RACES for d in DISEASES)
N_LABELS = len(CLASSES)

# Background intensity band per race; bands are disjoint with 0.10 gaps so
# the median pixel decides the race.
RACE_BANDS: dict[Race, tuple[float, float]] = {
    Race.CAUCASIAN: (0.70, 0.90),
    Race.ASIAN: (0.45, 0.65),
    Race.AFRICAN: (0.15, 0.35),
}
_RACE_THRESHOLDS = (0.40, 0.675)  # midpoints of the band gaps

PIXEL_NOISE_SIGMA = 0.03
_CONTRAST_RANGE = (0.30, 0.50)
_JITTER_PX = 2.0
_SCALE_RANGE = (0.85, 1.15)


def label_index(race: Race, disease: Disease) -> int:
    """Condition-label index in 0..14 for a (race, disease) pair."""
    return RACES.index(race) * len(DISEASES) + DISEASES.index(disease)


def label_pair(index: int) -> tuple[Race, Disease]:
    if not 0 <= index < N_LABELS:
        raise PreconditionError(f"label index {index} out of range 0..{N_LABELS - 1}")
    return RACES[index // len(DISEASES)], DISEASES[index % len(DISEASES)]


@dataclass(eq=False)
class Sample:
    """One labeled image: pixel grid in [0, 1] plus race and disease."""

    image: np.ndarray
    race: Race
    disease: Disease


@dataclass
class ClassCountTable:
    """Per-(race, disease) sample counts."""

    counts: dict[tuple[Race, Disease], int]

    def __post_init__(self) -> None:
        for key, n in self.counts.items():
            if n < 0:
                raise PreconditionError(f"negative count {n} for {key}")

    def get(self, race: Race, disease: Disease) -> int:
        return self.counts.get((race, disease), 0)

    def race_total(self, race: Race) -> int:
        return sum(n for (r, _), n in self.counts.items() if r is race)

    def total(self) -> int:
        return sum(self.counts.values())

    def nonempty(self) -> list[tuple[Race, Disease]]:
        return [cls for cls in CLASSES if self.counts.get(cls, 0) > 0]


_DEFAULT_PROFILE = {
    Race.CAUCASIAN: {"scc": 329, "lp": 181, "pso": 412, "acd": 295, "bcc": 302},
    Race.ASIAN: {"scc": 166, "lp": 183, "pso": 145, "acd": 108, "bcc": 154},
    Race.AFRICAN: {"scc": 56, "lp": 120, "pso": 87, "acd": 25, "bcc": 12},
}


def default_count_profile() -> ClassCountTable:
    """The default long-tail profile: 15 classes, 2575 samples in total."""
    counts = {}
    for race, per_disease in _DEFAULT_PROFILE.items():
        for code, n in per_disease.items():
            counts[(race, Disease(code))] = n
    return ClassCountTable(counts)


# ---------------------------------------------------------------------------
# Pattern templates
# ---------------------------------------------------------------------------

# One pattern family per disease, in enum order:
# spots, stripes, rings, patch, radial gradient.
_PATTERN_KINDS: dict[Disease, str] = {
    Disease.ALLERGIC_CONTACT_DERMATITIS: "spots",
    Disease.BASAL_CELL_CARCINOMA: "stripes",
    Disease.LICHEN_PLANUS: "rings",
    Disease.PSORIASIS: "patch",
    Disease.SQUAMOUS_CELL_CARCINOMA: "radial",
}


def pattern_raster(kind: str, height: int, width: int, dx: float, dy: float, scale: float) -> np.ndarray:
    """Evaluate one pattern template on the pixel grid, values in [0, 1].

    ``dx, dy`` shift the pattern center in pixels; ``scale`` stretches its
    geometry.  Templates are smooth functions of position so sub-pixel
    jitter needs no resampling.
    """
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    unit = scale * min(height, width) / 16.0
    cy = (height - 1) / 2.0 + dy
    cx = (width - 1) / 2.0 + dx
    u = (cols - cx) / unit
    v = (rows - cy) / unit
    rho = np.sqrt(u * u + v * v)
    if kind == "spots":
        centers = ((-3.2, -2.2), (3.0, -1.2), (-0.2, 3.2))
        val = np.zeros((height, width))
        for su, sv in centers:
            val += np.exp(-(((u - su) ** 2 + (v - sv) ** 2)) / (2.0 * 1.15**2))
        return np.clip(val, 0.0, 1.0)
    if kind == "stripes":
        window = np.exp(-((rho / 5.0) ** 4))
        phase = 2.0 * np.pi * (u + v) / (3.6 * np.sqrt(2.0))
        return (0.5 * (1.0 + np.cos(phase))) ** 2 * window
    if kind == "rings":
        return np.exp(-((rho - 3.9) ** 2) / (2.0 * 0.8**2))
    if kind == "patch":
        return np.exp(-(((u - 2.3) / 3.1) ** 8)) * np.exp(-(((v - 2.3) / 3.1) ** 8))
    if kind == "radial":
        return np.exp(-(rho**2) / (2.0 * 2.6**2))
    raise PreconditionError(f"unknown pattern kind {kind!r}")


def generate_synthetic(
    counts: ClassCountTable,
    rng: Rng,
    height: int = 16,
    width: int = 16,
) -> list[Sample]:
    """Generate a labeled corpus matching ``counts`` exactly.

    The race picks the background band, the disease picks the pattern
    family; position, scale, and contrast are jittered per sample and
    i.i.d. pixel noise is added.  Generation is a pure function of
    (counts, rng seed, image size): each (race, disease) stratum draws
    from its own named sub-stream.
    """
    if height < 8 or width < 8:
        raise PreconditionError(f"image size {height}x{width} below the 8x8 minimum")
    if counts.total() == 0:
        raise EmptyCorpusError("count table sums to zero samples")
    out: list[Sample] = []
    for race, disease in CLASSES:
        n = counts.get(race, disease)
        if n == 0:
            continue
        stream = rng.stream(f"gen/{race.value}/{disease.value}")
        lo, hi = RACE_BANDS[race]
        kind = _PATTERN_KINDS[disease]
        for _ in range(n):
            base = stream.uniform(lo, hi)
            dx = stream.uniform(-_JITTER_PX, _JITTER_PX)
            dy = stream.uniform(-_JITTER_PX, _JITTER_PX)
            scale = stream.uniform(*_SCALE_RANGE)
            contrast = stream.uniform(*_CONTRAST_RANGE)
            noise = stream.normal(0.0, PIXEL_NOISE_SIGMA, size=(height, width))
            sign = 1.0 if base < 0.5 else -1.0
            pattern = pattern_raster(kind, height, width, dx, dy, scale)
            image = np.clip(base + sign * contrast * pattern + noise, 0.0, 1.0)
            out.append(Sample(image=image, race=race, disease=disease))
    return out


# ---------------------------------------------------------------------------
# Oracle decoder
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _template_bank(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Template rasters over a jitter grid, shape (5, n_jitter, H*W).

    Returns ``(standardized, raw)``: the standardized rasters turn matched
    filtering into a dot product with the standardized image residual, and
    the raw [0, 1] rasters give the pattern footprint of each template.
    """
    offsets = (-2.0, -1.0, 0.0, 1.0, 2.0)
    scales = (0.85, 1.0, 1.15)
    standardized = []
    raw = []
    for disease in DISEASES:
        kind = _PATTERN_KINDS[disease]
        std_rasters = []
        raw_rasters = []
        for scale in scales:
            for dy in offsets:
                for dx in offsets:
                    t = pattern_raster(kind, height, width, dx, dy, scale).ravel()
                    raw_rasters.append(t)
                    t = t - t.mean()
                    norm = np.linalg.norm(t)
                    std_rasters.append(t / norm if norm > 0 else t)
        standardized.append(np.stack(std_rasters))
        raw.append(np.stack(raw_rasters))
    return np.stack(standardized), np.stack(raw)


_BACKGROUND_CUTOFF = 0.05  # raw template value below which a pixel counts as background


def decode_images(images: np.ndarray) -> tuple[list[Race], list[Disease]]:
    """Recover (race, disease) labels from pixels alone.

    Disease comes from the template with the highest absolute correlation
    to the median-subtracted image, maximized over a small grid of
    positions and scales.  Race comes from the mean background intensity,
    where background means the pixels the best-matching template leaves
    untouched; masking the pattern out keeps wide patterns from dragging
    the estimate across a band threshold.  The decoder reads nothing but
    the image, so it serves as an independent check on any generator
    claiming class conditioning.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    n, height, width = images.shape
    bank, raw = _template_bank(height, width)  # each (5, K, H*W)
    n_diseases, n_jitter, n_pix = bank.shape
    flat = images.reshape(n, -1)
    med = np.median(flat, axis=1)
    resid = flat - med[:, None]
    norms = np.linalg.norm(resid, axis=1)
    norms[norms == 0] = 1.0
    resid = resid / norms[:, None]
    corr = np.abs(resid @ bank.reshape(-1, n_pix).T).reshape(n, n_diseases, n_jitter)
    best_jitter = corr.argmax(axis=2)
    disease_idx = np.take_along_axis(corr, best_jitter[..., None], axis=2)[..., 0].argmax(axis=1)
    chosen = raw[disease_idx, best_jitter[np.arange(n), disease_idx]]
    mask = chosen < _BACKGROUND_CUTOFF
    counts = mask.sum(axis=1)
    safe = counts > 0
    background = np.where(safe, (flat * mask).sum(axis=1) / np.maximum(counts, 1), med)
    races = [
        Race.AFRICAN if b < _RACE_THRESHOLDS[0] else Race.ASIAN if b < _RACE_THRESHOLDS[1] else Race.CAUCASIAN
        for b in background
    ]
    diseases = [DISEASES[i] for i in disease_idx]
    return races, diseases


def decode_sample(image: np.ndarray) -> tuple[Race, Disease]:
    races, diseases = decode_images(np.asarray(image)[None])
    return races[0], diseases[0]


def decoder_accuracy(samples: list[Sample]) -> float:
    """Fraction of samples whose (race, disease) the oracle decoder recovers."""
    images = np.stack([s.image for s in samples])
    races, diseases = decode_images(images)
    hits = sum(
        1 for s, r, d in zip(samples, races, diseases) if s.race is r and s.disease is d
    )
    return hits / len(samples)


# ---------------------------------------------------------------------------
# External ingestion (PGM + CSV manifest)
# ---------------------------------------------------------------------------

_RACE_CODES = {r.value: r for r in RACES}
_DISEASE_CODES = {d.value: d for d in DISEASES}


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255 into a uint8 array."""
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise PreconditionError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise PreconditionError(f"{path}: malformed PGM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise PreconditionError(f"{path}: maxval {maxval}, expected 255")
    data = blob[pos : pos + width * height]
    if len(data) != width * height:
        raise PreconditionError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as binary PGM with maxval 255."""
    arr = np.asarray(image, dtype=np.float64)
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(pixels.tobytes())


def bilinear_resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize with align-corners bilinear interpolation; identity when sizes match."""
    src = np.asarray(image, dtype=np.float64)
    in_h, in_w = src.shape
    ys = np.linspace(0.0, in_h - 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, in_w - 1.0, width) if width > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def ingest_external(manifest_path, image_dir, height: int = 16, width: int = 16) -> list[Sample]:
    """Load samples listed in a ``file,race,disease`` CSV manifest.

    Images must be binary PGM; they are rescaled to the configured size and
    mapped to [0, 1].  All row-level problems are collected and raised
    together as one itemized ``IngestionError``.
    """
    image_dir = Path(image_dir)
    problems: list[tuple[int, str]] = []
    samples: list[Sample] = []
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise IngestionError([(1, "empty manifest, expected header file,race,disease")]) from exc
        if [h.strip().lower() for h in header] != ["file", "race", "disease"]:
            raise IngestionError([(1, f"bad header {header!r}, expected file,race,disease")])
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                problems.append((row_no, f"expected 3 columns, got {len(row)}"))
                continue
            fname, race_code, disease_code = (c.strip() for c in row)
            race = _RACE_CODES.get(race_code.lower())
            disease = _DISEASE_CODES.get(disease_code.lower())
            if race is None:
                problems.append((row_no, f"unknown race label {race_code!r}"))
                continue
            if disease is None:
                problems.append((row_no, f"unknown disease label {disease_code!r}"))
                continue
            path = image_dir / fname
            if not path.is_file():
                problems.append((row_no, f"missing file {fname}"))
                continue
            try:
                raw = read_pgm(path)
            except PreconditionError as exc:
                problems.append((row_no, str(exc)))
                continue
            image = bilinear_resize(raw / 255.0, height, width)
            samples.append(Sample(image=image, race=race, disease=disease))
    if problems:
        raise IngestionError(problems)
    return samples


def write_corpus(samples: list[Sample], out_dir) -> None:
    """Export a corpus as PGM files plus a manifest readable by ingest_external."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        fname = f"{s.race.value}_{s.disease.value}_{i:05d}.pgm"
        write_pgm(out_dir / fname, s.image)
        rows.append((fname, s.race.value, s.disease.value))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "race", "disease"])
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def count_samples(samples: list[Sample]) -> ClassCountTable:
    """Tally a sample list into a per-(race, disease) count table."""
    counts: dict[tuple[Race, Disease], int] = {}
    for s in samples:
        counts[(s.race, s.disease)] = counts.get((s.race, s.disease), 0) + 1
    return ClassCountTable(counts)


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test partitions of one corpus."""

    train: list[Sample] = field(default_factory=list)
    validation: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)

    def counts(self) -> ClassCountTable:
        return count_samples(self.train)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_8_1_1(samples: list[Sample], rng: Rng) -> DatasetSplit:
    """Stratified 8:1:1 split over (race, disease) classes.

    Within each stratum of size n: shuffle, send round(n/10) samples each to
    test and validation (at least 1 each once n >= 3), remainder to train.
    Strata with fewer than 3 samples go entirely to train.
    """
    by_class: dict[tuple[Race, Disease], list[Sample]] = {}
    for s in samples:
        by_class.setdefault((s.race, s.disease), []).append(s)
    split = DatasetSplit()
    for cls in CLASSES:
        members = by_class.get(cls)
        if not members:
            continue
        n = len(members)
        stream = rng.stream(f"split/{cls[0].value}/{cls[1].value}")
        order = stream.permutation(n)
        shuffled = [members[i] for i in order]
        n_hold = 0 if n < 3 else max(1, _round_half_up(n / 10.0))
        split.test.extend(shuffled[:n_hold])
        split.validation.extend(shuffled[n_hold : 2 * n_hold])
        split.train.extend(shuffled[2 * n_hold :])
    return split
