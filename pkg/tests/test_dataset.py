from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pkcam.errors import ConfigError
from pkcam.errors import DataError
from pkcam.errors import FormatError
from pkcam.services.dataset import MAGIC
from pkcam.services.dataset import DatasetBundle
from pkcam.services.dataset import batches
from pkcam.services.dataset import flip_horizontal
from pkcam.services.dataset import ingest
from pkcam.services.dataset import parse_synthetic
from pkcam.services.dataset import read_bundle
from pkcam.services.dataset import synthetic
from tests.conftest import RecordingListener


LABELS_AT = 20


def test_synthetic_set_is_reproducible() -> None:
    bundle = synthetic(classes=4, per_class=32, height=16, width=16, seed=7)
    assert bundle.shape == (128, 3, 16, 16)
    assert bundle.classes == 4
    assert np.bincount(bundle.labels).tolist() == [32, 32, 32, 32]
    assert bundle.digest() == synthetic(4, 32, 16, 16, seed=7).digest()
    assert bundle.digest() != synthetic(4, 32, 16, 16, seed=8).digest()


def test_synthetic_classes_differ() -> None:
    bundle = synthetic(classes=3, per_class=8, height=12, width=12, seed=2)
    means = [bundle.images[bundle.labels == c].mean(axis=0) for c in range(3)]
    assert not np.allclose(means[0], means[1])
    assert not np.allclose(means[1], means[2])


def test_bundle_bytes_round_trip() -> None:
    bundle = synthetic(classes=2, per_class=3, height=5, width=4, seed=1)
    loaded = read_bundle(bundle.to_bytes())
    np.testing.assert_array_equal(loaded.images, bundle.images)
    np.testing.assert_array_equal(loaded.labels, bundle.labels)
    assert loaded.classes == 2
    assert loaded.digest() == bundle.digest()


def test_empty_payload_fails_at_offset_zero() -> None:
    with pytest.raises(FormatError) as exc:
        read_bundle(b"")
    assert exc.value.offset == 0


def test_trailing_bytes_are_rejected() -> None:
    payload = synthetic(2, 1, 2, 2, seed=1).to_bytes()
    with pytest.raises(FormatError, match="1 trailing bytes"):
        read_bundle(payload + b"\0")


def test_truncated_pixels() -> None:
    payload = synthetic(2, 1, 2, 2, seed=1).to_bytes()
    with pytest.raises(FormatError, match="truncated pixels"):
        read_bundle(payload[:-1])


def test_out_of_range_label_reports_its_offset() -> None:
    payload = bytearray(synthetic(2, 2, 2, 2, seed=1).to_bytes())
    payload[LABELS_AT + 2] = 5
    with pytest.raises(FormatError, match="label 5") as exc:
        read_bundle(bytes(payload))
    assert exc.value.offset == LABELS_AT + 2


def header(count: int, dims: tuple[int, int, int, int]) -> bytes:
    return MAGIC + np.array([1, count], "<u4").tobytes() + np.array(dims, "<u2").tobytes()


def test_empty_bundles_are_rejected() -> None:
    with pytest.raises(FormatError, match="no images") as exc:
        read_bundle(header(0, (3, 8, 8, 4)))
    assert exc.value.offset == 8
    with pytest.raises(FormatError, match="width is 0") as exc:
        read_bundle(header(2, (3, 8, 0, 4)))
    assert exc.value.offset == 16
    with pytest.raises(FormatError, match="class count is 0") as exc:
        read_bundle(header(2, (3, 8, 8, 0)))
    assert exc.value.offset == 18


def test_bundle_validation() -> None:
    with pytest.raises(DataError):
        DatasetBundle(images=np.zeros((2, 3, 4, 4)), labels=np.array([0]), classes=2)
    with pytest.raises(DataError):
        DatasetBundle(images=np.zeros((1, 3, 4, 4)), labels=np.array([2]), classes=2)
    with pytest.raises(DataError, match="empty dataset"):
        DatasetBundle(images=np.zeros((0, 3, 4, 4)), labels=np.array([]), classes=2)


def test_normalisation_subtracts_channel_means() -> None:
    images = np.stack([np.full((3, 2, 2), 51), np.full((3, 2, 2), 153)])
    bundle = DatasetBundle(images=images, labels=np.array([0, 1]), classes=2)
    np.testing.assert_allclose(bundle.channel_means, [0.4, 0.4, 0.4])
    np.testing.assert_allclose(bundle.normalized()[0], -0.2)
    np.testing.assert_allclose(bundle.normalized(np.zeros(3))[1], 0.6)
    with pytest.raises(DataError):
        bundle.normalized(np.zeros(2))


def test_image_directory(tmp_path: Path, listener: RecordingListener) -> None:
    for name, colour in (("cat", (200, 10, 10)), ("dog", (10, 10, 200))):
        (tmp_path / name).mkdir()
        for i in range(2):
            Image.new("RGB", (6, 4), colour).save(tmp_path / name / f"{i}.png")
    (tmp_path / "cat" / "notes.txt").write_text("ignored")

    bundle = ingest(tmp_path, listener)
    assert bundle.shape == (4, 3, 4, 6)
    assert bundle.labels.tolist() == [0, 0, 1, 1]
    assert bundle.images[0, :, 0, 0].tolist() == [200, 10, 10]
    assert any("cat: class 0, 2 images" in message for message, _ in listener.messages)


def test_image_directory_rejects_mixed_sizes(tmp_path: Path) -> None:
    (tmp_path / "a").mkdir()
    Image.new("RGB", (4, 4)).save(tmp_path / "a" / "0.png")
    Image.new("RGB", (5, 4)).save(tmp_path / "a" / "1.png")
    with pytest.raises(DataError, match="expected 4x4"):
        ingest(tmp_path)


def test_undecodable_image(tmp_path: Path) -> None:
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DataError, match="cannot decode"):
        ingest(tmp_path)


def test_ingest_sources(tmp_path: Path) -> None:
    bundle = ingest("synthetic:classes=2,per_class=2,height=4,width=4,seed=9")
    assert bundle.shape == (4, 3, 4, 4)
    bundle.save(tmp_path / "set.pkds")
    assert ingest(tmp_path / "set.pkds").digest() == bundle.digest()
    with pytest.raises(DataError, match="does not exist"):
        ingest(tmp_path / "missing.pkds")


def test_parse_synthetic() -> None:
    assert parse_synthetic("synthetic:classes=3,seed=0")["classes"] == 3
    with pytest.raises(ConfigError):
        parse_synthetic("synthetic:colours=3")
    with pytest.raises(ConfigError):
        parse_synthetic("synthetic:classes=many")
    with pytest.raises(ConfigError):
        parse_synthetic("synthetic:height=0")


def test_batches_and_flips() -> None:
    assert [b.tolist() for b in batches(5, 2)] == [[0, 1], [2, 3], [4]]
    shuffled = np.concatenate(list(batches(10, 3, np.random.default_rng(0))))
    assert sorted(shuffled.tolist()) == list(range(10))

    images = np.arange(2 * 1 * 1 * 3).reshape(2, 1, 1, 3)
    flipped = flip_horizontal(images, np.random.default_rng(4))
    for original, result in zip(images, flipped):
        assert result.tolist() in (original.tolist(), original[..., ::-1].tolist())
