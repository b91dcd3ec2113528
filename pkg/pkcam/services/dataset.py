"""Dataset ingestion: synthetic blobs, raw bundles and directories of images.

Raw bundle layout (little-endian): magic ``PKDS``, u32 version, u32 N, u16 C, H, W,
u16 class count, N u16 labels, then N·C·H·W u8 pixels.
"""

import hashlib
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from cleo.io.outputs.output import Verbosity
from PIL import Image
from PIL import UnidentifiedImageError

from pkcam.errors import ConfigError
from pkcam.errors import DataError
from pkcam.errors import FormatError
from pkcam.numpy_ext import BinaryReader
from pkcam.numpy_ext import BinaryWriter
from pkcam.services.listener import NULL_LISTENER
from pkcam.services.listener import Listener

MAGIC = b"PKDS"
VERSION = 1
SYNTHETIC_PREFIX = "synthetic:"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".ppm", ".pgm", ".tif", ".tiff"}


@dataclass
class DatasetBundle:
    images: np.ndarray
    labels: np.ndarray
    classes: int
    split: str = "train"
    channel_means: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.images.ndim != 4:
            raise DataError(f"images must be N×C×H×W, got shape {self.images.shape}")
        if 0 in self.images.shape or self.classes < 1:
            raise DataError(
                f"empty dataset: images {self.images.shape}, {self.classes} classes"
            )
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.labels)} labels for {len(self.images)} images")
        if int(self.labels.max()) >= self.classes:
            raise DataError(
                f"label {int(self.labels.max())} is not below class count {self.classes}"
            )
        if self.channel_means is None:
            self.channel_means = self.images.mean(axis=(0, 2, 3), dtype=np.float64) / 255.0

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        n, c, h, w = self.images.shape
        return n, c, h, w

    def normalized(self, means: np.ndarray | None = None) -> np.ndarray:
        """Pixels scaled to [0, 1] with the per-channel means subtracted."""
        means = self.channel_means if means is None else np.asarray(means, dtype=np.float64)
        if means.shape != (self.images.shape[1],):
            raise DataError(
                f"{means.shape[0]} channel means for {self.images.shape[1]}-channel images"
            )
        return self.images / 255.0 - means.reshape(1, -1, 1, 1)

    def to_bytes(self) -> bytes:
        n, c, h, w = self.images.shape
        writer = BinaryWriter()
        writer.write_bytes(MAGIC)
        writer.write([VERSION, n], "<u4")
        writer.write([c, h, w, self.classes], "<u2")
        writer.write(self.labels, "<u2")
        writer.write(self.images, "u1")
        return writer.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path: Path) -> None:
        path.write_bytes(self.to_bytes())


def batches(
    count: int,
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> Iterator[np.ndarray]:
    """Index batches in file order, or in a seeded permutation when `rng` is given."""
    order = np.arange(count) if rng is None else rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def flip_horizontal(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(len(images)) < 0.5
    flipped = images.copy()
    flipped[mask] = images[mask][..., ::-1]
    return flipped


def read_bundle(payload: bytes) -> DatasetBundle:
    reader = BinaryReader(payload)
    reader.expect(MAGIC)
    version_at = reader.offset
    version, count = (int(v) for v in reader.read("<u4", 2, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported bundle version {version}", version_at)
    if count == 0:
        raise FormatError("bundle holds no images", version_at + 4)
    dims_at = reader.offset
    dims = [int(v) for v in reader.read("<u2", 4, "header")]
    if 0 in dims:
        field = ("channels", "height", "width", "class count")[dims.index(0)]
        raise FormatError(f"bundle {field} is 0", dims_at + 2 * dims.index(0))
    channels, height, width, classes = dims
    labels_at = reader.offset
    labels = reader.read("<u2", count, "labels")
    pixels = reader.read("u1", count * channels * height * width, "pixels")
    if not reader.exhausted:
        raise FormatError(f"{len(payload) - reader.offset} trailing bytes", reader.offset)
    if count and int(labels.max()) >= classes:
        bad = int(np.argmax(labels >= classes))
        raise FormatError(f"label {int(labels[bad])} >= class count {classes}", labels_at + 2 * bad)
    return DatasetBundle(
        images=pixels.reshape(count, channels, height, width),
        labels=labels,
        classes=classes,
    )


def parse_synthetic(source: str) -> dict[str, int]:
    spec = {"classes": 8, "per_class": 16, "height": 16, "width": 16, "seed": 1, "channels": 3}
    body = source.removeprefix(SYNTHETIC_PREFIX)
    for item in filter(None, (part.strip() for part in body.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in spec:
            raise ConfigError(f"bad synthetic dataset option {item!r} in {source!r}")
        try:
            spec[key] = int(value)
        except ValueError as exc:
            raise ConfigError(f"synthetic option {key} must be an integer, got {value!r}") from exc
        if spec[key] < (0 if key == "seed" else 1):
            raise ConfigError(f"synthetic option {key} out of range: {spec[key]}")
    return spec


def synthetic(
    classes: int,
    per_class: int,
    height: int,
    width: int,
    seed: int,
    channels: int = 3,
) -> DatasetBundle:
    """Class-dependent Gaussian blobs on a noisy background.

    Every class owns a colour, a blob centre and a blob radius; each image jitters the
    centre by up to two pixels and adds pixel noise.
    """
    rng = np.random.default_rng(seed)
    colours = rng.uniform(0.1, 1.0, size=(classes, channels))
    centres = rng.uniform(0.25, 0.75, size=(classes, 2)) * (height, width)
    radii = rng.uniform(0.15, 0.3, size=classes) * min(height, width)

    ys, xs = np.mgrid[0:height, 0:width]
    images = np.empty((classes * per_class, channels, height, width), dtype=np.uint8)
    labels = np.repeat(np.arange(classes), per_class)
    for i, label in enumerate(labels):
        cy, cx = centres[label] + rng.uniform(-2.0, 2.0, size=2)
        blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * radii[label] ** 2))
        image = 0.1 + blob[None] * colours[label][:, None, None]
        image += rng.normal(0.0, 0.05, size=image.shape)
        images[i] = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return DatasetBundle(images=images, labels=labels, classes=classes)


def read_image_dir(root: Path, listener: Listener = NULL_LISTENER) -> DatasetBundle:
    """One sub-directory per class, in sorted order; every image must share one size."""
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root} has no class sub-directories")
    images = []
    labels = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        listener(f"{class_dir.name}: class {label}, {len(files)} images", Verbosity.VERBOSE.value)
        for path in files:
            try:
                with Image.open(path) as image:
                    pixels = np.asarray(image.convert("RGB"), dtype=np.uint8)
            except (UnidentifiedImageError, OSError) as exc:
                raise DataError(f"cannot decode image {path}: {exc}") from exc
            if images and pixels.shape != images[0].shape:
                raise DataError(
                    f"{path} is {pixels.shape[1]}x{pixels.shape[0]}, "
                    f"expected {images[0].shape[1]}x{images[0].shape[0]}"
                )
            images.append(pixels)
            labels.append(label)
    if not images:
        raise DataError(f"{root} contains no images")
    return DatasetBundle(
        images=np.stack(images).transpose(0, 3, 1, 2),
        labels=np.asarray(labels),
        classes=len(class_dirs),
    )


def ingest(source: str | Path, listener: Listener = NULL_LISTENER) -> DatasetBundle:
    """Loads a `synthetic:...` spec, a directory of class folders or a raw bundle file."""
    if isinstance(source, str) and source.startswith(SYNTHETIC_PREFIX):
        bundle = synthetic(**parse_synthetic(source))
    else:
        path = Path(source)
        if path.is_dir():
            bundle = read_image_dir(path, listener)
        elif path.is_file():
            bundle = read_bundle(path.read_bytes())
        else:
            raise DataError(f"dataset {source} does not exist")
    listener(
        f"dataset {source}: {len(bundle)} images, {bundle.classes} classes, "
        f"digest {bundle.digest()[:12]}",
        Verbosity.VERBOSE.value,
    )
    return bundle
