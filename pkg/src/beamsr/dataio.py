"""Image files, synthetic speckle phantoms and dataset manifests.

On disk an image is a binary PGM (P5, maxval 255) with one row per beamline,
so the PGM width is the depth D and the height is the line count L. A JSON
sidecar ``<name>.json`` next to it carries ``district``, ``L`` and ``D``,
plus the optional keys ``scheme`` and ``stage`` written by this package.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from beamsr.core import SamplingScheme, UsImage, decimate, require_full_size
from beamsr.errors import DataError, FormatError
from beamsr.resample import upsample_cubic

MAX_DIM = 1 << 16
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (1500, 400, 200)

_TOKEN = re.compile(rb"#[^\n]*\n?|\s+")


def to_bytes(img: UsImage) -> np.ndarray:
    return np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Split the first ``count`` header tokens, skipping comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        m = _TOKEN.match(data, pos)
        if m:
            pos = m.end()
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace() and data[end : end + 1] != b"#":
            end += 1
        if end == pos:
            raise FormatError("malformed PGM header: unexpected end of file")
        tokens.append(data[pos:end])
        pos = end
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("malformed PGM header")
    return tokens, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 byte string into a (height, width) uint8 array."""
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"malformed PGM header: magic {tokens[0]!r} is not P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("malformed PGM header: non-integer field") from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255 is accepted")
    if not (0 < width <= MAX_DIM and 0 < height <= MAX_DIM):
        raise FormatError(f"dimension overflow: {width}x{height}")
    payload = data[offset : offset + width * height]
    if len(payload) != width * height:
        raise FormatError(f"truncated PGM raster: {len(payload)} of {width * height} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def encode_pgm(raster: np.ndarray) -> bytes:
    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    height, width = raster.shape
    return b"P5\n%d %d\n255\n" % (width, height) + raster.tobytes()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_sidecar(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: malformed sidecar ({exc})") from exc


def load_image(path) -> UsImage:
    path = Path(path)
    raster = decode_pgm(path.read_bytes())
    meta = read_sidecar(path)
    if meta and (meta.get("L") != raster.shape[0] or meta.get("D") != raster.shape[1]):
        raise FormatError(f"{path}: sidecar dimensions disagree with the raster")
    return UsImage(raster / 255.0, district=str(meta.get("district", "")))


def save_image(img: UsImage, path, **extra) -> None:
    """Write ``img`` as PGM plus sidecar; ``extra`` keys go into the sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(to_bytes(img)))
    meta = {"district": img.district, "L": img.lines, "D": img.depth}
    meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class PhantomParams:
    seed: int = 0
    count: int = 16
    lines: int = 64
    depth: int = 64
    blobs: tuple[int, int] = (2, 6)
    blob_intensity: tuple[float, float] = (0.1, 1.6)
    speckle_shape: float = 1.0
    background: float = 0.35
    axial_sigma: float = 1.2
    lateral_sigma: float = 0.0
    district: str = "phantom"

    def __post_init__(self):
        if self.lines < 16 or self.depth < 16:
            raise DataError("phantoms need at least 16 lines and 16 depth samples")
        if self.count < 1:
            raise DataError("phantom count must be positive")
        if self.blobs[0] < 0 or self.blobs[1] < self.blobs[0]:
            raise DataError(f"invalid blob count range {self.blobs}")
        if self.speckle_shape <= 0:
            raise DataError("speckle shape must be positive")


def _phantom(rng: np.random.Generator, p: PhantomParams) -> np.ndarray:
    L, D = p.lines, p.depth
    li, di = np.meshgrid(np.arange(L), np.arange(D), indexing="ij")

    # smooth tissue background with mild depth attenuation
    field_ = gaussian_filter(rng.normal(size=(L, D)), sigma=max(L, D) / 6.0, mode="wrap")
    field_ /= field_.std() + 1e-12
    echo = p.background * (1.0 + 0.3 * field_) * np.exp(-0.5 * di / D)

    n_blobs = rng.integers(p.blobs[0], p.blobs[1] + 1)
    for _ in range(n_blobs):
        cl, cd = rng.uniform(0, L), rng.uniform(0, D)
        rl, rd = rng.uniform(0.05, 0.25) * L, rng.uniform(0.05, 0.25) * D
        theta = rng.uniform(0, np.pi)
        dl, dd = li - cl, di - cd
        u = (dl * np.cos(theta) + dd * np.sin(theta)) / rl
        v = (-dl * np.sin(theta) + dd * np.cos(theta)) / rd
        r = np.sqrt(u * u + v * v)
        edge = rng.uniform(0.05, 0.3)
        weight = 1.0 / (1.0 + np.exp((r - 1.0) / edge))
        level = rng.uniform(*p.blob_intensity)
        echo = echo * (1.0 - weight) + level * p.background * weight

    # Nakagami envelope with unit mean; shape 1 is Rayleigh speckle
    m = p.speckle_shape
    speckle = np.sqrt(rng.gamma(m, 1.0 / m, size=(L, D)))
    speckle /= math.exp(math.lgamma(m + 0.5) - math.lgamma(m)) / math.sqrt(m)
    img = echo * speckle
    img = gaussian_filter1d(img, p.axial_sigma, axis=1, mode="nearest")
    if p.lateral_sigma > 0:
        img = gaussian_filter1d(img, p.lateral_sigma, axis=0, mode="nearest")
    return np.clip(img, 0.0, 1.0)


def generate_phantoms(p: PhantomParams) -> list[UsImage]:
    """Deterministic speckle-and-blob phantoms, one child RNG stream per image."""
    streams = np.random.SeedSequence(p.seed).spawn(p.count)
    return [UsImage(_phantom(np.random.default_rng(s), p), district=p.district) for s in streams]


def split_sizes(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` items, every split >= 1 when n >= 3."""
    if n < 3:
        raise DataError(f"corpus smaller than 3 images ({n})")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0):
        raise DataError(f"split ratios must be three positive numbers, got {ratios}")
    quota = n * ratios / ratios.sum()
    sizes = np.floor(quota).astype(int)
    order = np.argsort(-(quota - sizes), kind="stable")
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    for i in range(3):
        while sizes[i] < 1:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[i] += 1
    return tuple(int(s) for s in sizes)


@dataclass
class ManifestEntry:
    name: str
    target_path: str
    lines: int
    depth: int
    split: str
    input_path: str = ""


@dataclass
class DatasetManifest:
    district_label: str
    scheme: SamplingScheme
    entries: list[ManifestEntry]
    corpus_mean: float
    seed: int = 0
    ratios: tuple = DEFAULT_RATIOS
    root: Path | None = field(default=None, compare=False, repr=False)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def to_json(self) -> dict:
        return {
            "district_label": self.district_label,
            "scheme": self.scheme.factor_label,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "corpus_mean": self.corpus_mean,
            "entries": [asdict(e) for e in self.entries],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
            entries = [ManifestEntry(**e) for e in raw["entries"]]
            return cls(
                district_label=raw["district_label"],
                scheme=SamplingScheme.from_label(raw["scheme"]),
                entries=entries,
                corpus_mean=float(raw["corpus_mean"]),
                seed=int(raw.get("seed", 0)),
                ratios=tuple(raw.get("ratios", DEFAULT_RATIOS)),
                root=path.parent,
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed manifest ({exc})") from exc

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() or self.root is None else self.root / p


@dataclass
class Pair:
    name: str
    input: UsImage
    target: UsImage


def make_input(target: UsImage, scheme: SamplingScheme) -> UsImage:
    """Simulated acquisition followed by cubic-convolution reconstruction."""
    return upsample_cubic(decimate(target, scheme), scheme, target.lines)


def build_dataset(targets, scheme: SamplingScheme, ratios=DEFAULT_RATIOS, seed: int = 0,
                  names=None, district: str = "") -> tuple[DatasetManifest, dict[str, list[Pair]]]:
    """Pair each target with its reconstructed input and assign splits.

    Splits come from a seeded shuffle; ``corpus_mean`` is the mean target
    intensity over the training split.
    """
    targets = list(targets)
    n = len(targets)
    sizes = split_sizes(n, ratios)
    for t in targets:
        require_full_size(t)
    names = list(names) if names is not None else [f"img_{i:05d}" for i in range(n)]
    if len(names) != n or len(set(names)) != n:
        raise DataError("image names must be unique and one per target")
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    labels[order[: sizes[0]]] = "train"
    labels[order[sizes[0] : sizes[0] + sizes[1]]] = "val"
    labels[order[sizes[0] + sizes[1] :]] = "test"

    pairs: dict[str, list[Pair]] = {s: [] for s in SPLITS}
    entries = []
    for i in range(n):
        t = targets[i]
        pairs[labels[i]].append(Pair(names[i], make_input(t, scheme), t))
        entries.append(ManifestEntry(names[i], f"targets/{names[i]}.pgm", t.lines, t.depth,
                                     str(labels[i]), f"inputs/{names[i]}.pgm"))
    train_px = np.concatenate([p.target.pixels.ravel() for p in pairs["train"]])
    label = district or (targets[0].district if targets else "")
    manifest = DatasetManifest(label, scheme, entries, float(train_px.mean()), seed, tuple(ratios))
    return manifest, pairs


def write_dataset(manifest: DatasetManifest, pairs: dict[str, list[Pair]], out_dir) -> Path:
    out_dir = Path(out_dir)
    by_name = {p.name: p for split in pairs.values() for p in split}
    for e in manifest.entries:
        pair = by_name[e.name]
        save_image(pair.target, out_dir / e.target_path, stage="target")
        save_image(pair.input, out_dir / e.input_path, stage="upsampled",
                   scheme=manifest.scheme.factor_label)
    manifest.root = out_dir
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path


def load_pairs(manifest: DatasetManifest, split: str) -> list[Pair]:
    """Load one split; inputs are rebuilt from the targets, not read back quantized."""
    out = []
    for e in manifest.split(split):
        target = load_image(manifest.resolve(e.target_path))
        if target.shape != (e.lines, e.depth):
            raise DataError(f"{e.name}: image shape {target.shape} disagrees with manifest")
        out.append(Pair(e.name, make_input(target, manifest.scheme), target))
    return out


def load_directory(path) -> tuple[list[str], list[UsImage]]:
    paths = sorted(Path(path).glob("*.pgm"))
    return [p.stem for p in paths], [load_image(p) for p in paths]
