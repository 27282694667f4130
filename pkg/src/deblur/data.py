"""Image I/O, paired-dataset manifests, batching and synthetic blur.

Images on disk are binary PPM (P6, RGB) or PGM (P5, grey) with maxval 255.
In memory an 8-bit image is a ``uint8`` array of shape ``(h, w, c)``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from deblur.errors import FormatError, UnsupportedFormatError
from deblur.tensor import DTYPE, ConvKernel, as_tensor, conv2d, gaussian_window

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".ppm", ".pgm")
_WHITESPACE = b" \t\r\n\v\f"


# --- PPM / PGM ---------------------------------------------------------------

def decode_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FormatError(f"bad magic {magic!r}, expected b'P6' or b'P5'", offset=0)

    pos = 2
    fields = []
    while len(fields) < 3:
        start = pos
        # skip whitespace and comments
        while pos < len(buf) and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= len(buf):
            raise FormatError("truncated header", offset=pos)
        if pos == start:
            raise FormatError("expected whitespace in header", offset=pos)
        tok_start = pos
        while pos < len(buf) and buf[pos] in b"0123456789":
            pos += 1
        if pos == tok_start:
            raise FormatError(f"expected a decimal number, found {buf[pos:pos + 1]!r}", offset=pos)
        fields.append((int(buf[tok_start:pos]), tok_start))

    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise FormatError(f"invalid width {width}", offset=w_off)
    if height < 1:
        raise FormatError(f"invalid height {height}", offset=h_off)
    if maxval != 255:
        raise UnsupportedFormatError(f"unsupported maxval {maxval}, only 255 is handled", offset=m_off)
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1

    need = width * height * channels
    have = len(buf) - pos
    if have < need:
        raise FormatError(f"truncated raster: need {need} bytes, have {have}", offset=len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after raster", offset=pos + need)
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return raster.reshape(height, width, channels).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected uint8 (h, w, 1|3) image, got {img.dtype} {img.shape}")
    h, w, c = img.shape
    magic = b"P6" if c == 3 else b"P5"
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    try:
        return decode_pnm(buf)
    except FormatError as exc:
        exc.path = path
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


def write_image(img: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_pnm(img))


def to_tensor(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=DTYPE) / DTYPE(255.0)).astype(DTYPE)


def to_image(t: np.ndarray) -> np.ndarray:
    t = as_tensor(t)
    return np.rint(np.clip(t, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_tensor(path) -> np.ndarray:
    return to_tensor(read_image(path))


# --- synthetic degradation -------------------------------------------------

@dataclass(frozen=True)
class BlurSpec:
    sigma: float = 1.5
    kernel_size: int = 9
    seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")

    def kernel(self) -> np.ndarray:
        """2-D blur weights, normalized to sum to 1."""
        g = gaussian_window(self.kernel_size, self.sigma)
        return np.outer(g, g)


def gaussian_blur(img: np.ndarray, spec: BlurSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Blur each channel with a zero-padded Gaussian, add optional noise, clamp to [0, 1]."""
    x = as_tensor(img)
    h, w, c = x.shape
    k = spec.kernel_size
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than blur kernel {k}x{k}")
    kernel = ConvKernel(spec.kernel().astype(x.dtype)[None, None], np.zeros(1, dtype=x.dtype))
    out = np.concatenate([conv2d(x[:, :, ch : ch + 1], kernel) for ch in range(c)], axis=2)
    if spec.noise_std > 0:
        if rng is None:
            rng = np.random.default_rng(spec.seed)
        out = out + rng.normal(0.0, spec.noise_std, size=out.shape).astype(out.dtype)
    return np.clip(out, 0.0, 1.0).astype(x.dtype, copy=False)


# --- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class PairRow:
    id: str
    degraded: str
    clean: str | None
    split: str


@dataclass
class PairManifest:
    """Ordered (degraded, clean) pairs; paths are relative to ``base_dir``."""

    rows: list[PairRow] = field(default_factory=list)
    base_dir: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.id in seen:
                raise ValueError(f"duplicate id {row.id!r} in manifest")
            seen.add(row.id)
            if row.split not in SPLITS:
                raise ValueError(f"row {row.id!r}: unknown split {row.split!r}")
            if row.split != "test" and not row.clean:
                raise ValueError(f"row {row.id!r}: {row.split} rows need a clean path")
        self.base_dir = Path(self.base_dir)

    def __len__(self):
        return len(self.rows)

    def split(self, name: str) -> list[PairRow]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [r for r in self.rows if r.split == name]

    def degraded_path(self, row: PairRow) -> Path:
        return self.base_dir / row.degraded

    def clean_path(self, row: PairRow) -> Path | None:
        return self.base_dir / row.clean if row.clean else None


def read_manifest(path) -> PairManifest:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "degraded", "clean", "split"]:
            raise FormatError(f"bad manifest header {header}", path=path)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 4:
                raise FormatError(f"line {lineno}: expected 4 fields, got {len(rec)}", path=path)
            rid, degraded, clean, split = rec
            rows.append(PairRow(rid, degraded, clean or None, split))
    return PairManifest(rows, base_dir=path.parent)


def write_manifest(manifest: PairManifest, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "degraded", "clean", "split"])
        for r in manifest.rows:
            writer.writerow([r.id, r.degraded, r.clean or "", r.split])


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3:
        raise ValueError(f"need three split fractions (train, val, test), got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"split fractions must be nonnegative and sum to 1, got {list(fractions)}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def build_synthetic_dataset(
    clean_dir, out_dir, spec: BlurSpec, split_fractions=(0.8, 0.2, 0.0), seed: int = 0
) -> PairManifest:
    """Blur every image in ``clean_dir`` and write ``out_dir/manifest.csv``.

    Blurred images go to ``out_dir/degraded/<name>.ppm|pgm``; the manifest
    refers to the original clean files. Splits come from a permutation seeded
    by ``seed``; row order follows the sorted file names.
    """
    sources = list_images(clean_dir)
    if not sources:
        raise ValueError(f"no .ppm/.pgm images in {clean_dir}")
    counts = split_counts(len(sources), split_fractions)

    out_dir = Path(out_dir)
    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    order = np.random.default_rng(seed).permutation(len(sources))
    split_of = np.empty(len(sources), dtype=object)
    split_of[order[: counts[0]]] = "train"
    split_of[order[counts[0] : counts[0] + counts[1]]] = "val"
    split_of[order[counts[0] + counts[1] :]] = "test"

    rows = []
    for i, src in enumerate(sources):
        clean = load_tensor(src)
        noise_rng = np.random.default_rng([spec.seed, i])
        blurred = gaussian_blur(clean, spec, rng=noise_rng)
        dst = out_dir / "degraded" / src.name
        write_image(to_image(blurred), dst)
        rows.append(
            PairRow(
                id=src.stem,
                degraded=Path(os.path.relpath(dst, out_dir)).as_posix(),
                clean=Path(os.path.relpath(src.resolve(), out_dir.resolve())).as_posix(),
                split=str(split_of[i]),
            )
        )
    manifest = PairManifest(rows, base_dir=out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


# --- batching ------------------------------------------------------------------

def batch_rows(manifest: PairManifest, split: str, batch_size: int, seed: int, epoch: int) -> list[list[PairRow]]:
    """Shuffle a split with a generator seeded by (seed, epoch) and chunk it.

    The last short batch is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rows = manifest.split(split)
    perm = np.random.default_rng([seed, epoch]).permutation(len(rows))
    shuffled = [rows[i] for i in perm]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def batches(
    manifest: PairManifest, split: str, batch_size: int, seed: int, epoch: int
) -> Iterator[list[tuple[np.ndarray, np.ndarray]]]:
    for chunk in batch_rows(manifest, split, batch_size, seed, epoch):
        yield [
            (load_tensor(manifest.degraded_path(r)), load_tensor(manifest.clean_path(r)))
            for r in chunk
        ]
