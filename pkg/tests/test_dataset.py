import io

import numpy as np
import png
import pytest
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import DatasetError, DatasetIOError, ImageFormatError
from app.schemas.dataset import SyntheticSpec
from app.services.dataset_service import dataset_service


def write_ppm(path, pixels):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset_service.encode_ppm(pixels))


def independent_ppm(raster: np.ndarray) -> bytes:
    """H×W×3 uint8 raster as P6, written without the service"""
    h, w, _ = raster.shape
    return f"P6 {w} {h} 255\n".encode("ascii") + raster.tobytes()


# ============================================================================
# PPM
# ============================================================================

def test_decode_red_pixel():
    out = dataset_service.decode_ppm(b"P6\n1 1\n255\n" + bytes([255, 0, 0])).data
    assert out.shape == (3, 1, 1)
    assert out[:, 0, 0].tolist() == [1.0, 0.0, 0.0]


def test_header_comment_is_ignored():
    raster = bytes([10, 20, 30, 40, 50, 60])
    plain = dataset_service.decode_ppm(b"P6\n2 1\n255\n" + raster).data
    commented = dataset_service.decode_ppm(b"P6\n# made by hand\n2 1 # width height\n255\n" + raster).data
    assert np.array_equal(plain, commented)


def test_decode_matches_independent_encoder(rng):
    raster = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    out = dataset_service.decode_ppm(independent_ppm(raster)).data
    np.testing.assert_array_equal(out, raster.transpose(2, 0, 1).astype(np.float32) / 255.0)


def test_encode_header_layout(rng):
    data = dataset_service.encode_ppm(rng.uniform(size=(3, 2, 4)))
    assert data.startswith(b"P6\n4 2\n255\n")
    assert len(data) == len(b"P6\n4 2\n255\n") + 4 * 2 * 3


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n\x00\x00\x00",
    b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00",
    b"P6\n2 2\n255\n\x00\x00\x00",
    b"P6\n1",
    b"P6\n0 1\n255\n",
    b"P6\nx 1\n255\n\x00\x00\x00",
])
def test_malformed_ppm(data):
    with pytest.raises(ImageFormatError):
        dataset_service.decode_ppm(data)


@pytest.mark.parametrize("seed", range(100))
def test_corrupted_ppm_fails_cleanly(seed):
    r = np.random.default_rng(seed)
    data = bytearray(independent_ppm(r.integers(0, 256, size=(3, 4, 3)).astype(np.uint8)))
    for pos in r.integers(0, 16, size=3):
        data[int(pos)] = int(r.integers(0, 256))
    data = bytes(data[: int(r.integers(1, len(data) + 1))])
    try:
        out = dataset_service.decode_ppm(data)
    except ImageFormatError:
        return
    assert out.data.min() >= 0 and out.data.max() <= 1


def test_unknown_format_lists_supported():
    with pytest.raises(ImageFormatError) as exc:
        dataset_service.decode_image(b"GIF89a....")
    assert "ppm" in exc.value.detail


# ============================================================================
# PNG
# ============================================================================

def png_bytes(raster: np.ndarray) -> bytes:
    h, w, _ = raster.shape
    buf = io.BytesIO()
    png.Writer(width=w, height=h, greyscale=False).write(buf, raster.reshape(h, w * 3).tolist())
    return buf.getvalue()


def test_png_disabled_by_default(monkeypatch):
    monkeypatch.setattr(settings, "ENABLE_PNG", False)
    with pytest.raises(ImageFormatError):
        dataset_service.decode_image(png_bytes(np.zeros((1, 1, 3), dtype=np.uint8)))


def test_png_decodes_when_enabled(monkeypatch, rng):
    monkeypatch.setattr(settings, "ENABLE_PNG", True)
    raster = rng.integers(0, 256, size=(3, 5, 3)).astype(np.uint8)
    out = dataset_service.decode_image(png_bytes(raster)).data
    np.testing.assert_array_equal(out, raster.transpose(2, 0, 1).astype(np.float32) / 255.0)


# ============================================================================
# RESIZE
# ============================================================================

def test_bilinear_upsample_row():
    pixels = np.array([[[0.0, 1.0]]] * 3)
    out = dataset_service.resize_bilinear(pixels, 1, 4)
    np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])


def test_resize_same_size_is_identity(rng):
    pixels = rng.uniform(size=(3, 6, 6)).astype(np.float32)
    assert np.array_equal(dataset_service.resize_bilinear(pixels, 6, 6), pixels)


def test_resize_constant_stays_constant():
    out = dataset_service.resize_bilinear(np.full((3, 7, 5), 0.3), 4, 9)
    assert out.shape == (3, 4, 9)
    np.testing.assert_allclose(out, 0.3, rtol=1e-6)


# ============================================================================
# DIRECTORY DATASETS
# ============================================================================

def test_load_two_classes(tmp_path, rng):
    for name in ("b", "a"):
        for i in range(2):
            write_ppm(tmp_path / name / f"{i}.ppm", rng.uniform(size=(3, 4, 4)))
    (tmp_path / "a" / ".DS_Store").write_bytes(b"junk")

    dataset = dataset_service.load_dataset_dir(tmp_path, size=4)
    assert dataset.class_names == ["a", "b"]
    assert len(dataset) == 4
    assert dataset.labels.tolist() == [0, 0, 1, 1]
    assert dataset.pixels.shape == (4, 3, 4, 4)


def test_load_resizes(tmp_path, rng):
    for name in ("a", "b"):
        write_ppm(tmp_path / name / "0.ppm", rng.uniform(size=(3, 10, 6)))
    assert dataset_service.load_dataset_dir(tmp_path, size=8).pixels.shape == (2, 3, 8, 8)


def test_reload_is_identical(tmp_path, rng):
    for name in ("x", "y"):
        for i in range(3):
            write_ppm(tmp_path / name / f"{i}.ppm", rng.uniform(size=(3, 4, 4)))
    first = dataset_service.load_dataset_dir(tmp_path, size=4)
    second = dataset_service.load_dataset_dir(tmp_path, size=4)
    assert np.array_equal(first.pixels, second.pixels)
    assert [i.source for i in first.images] == [i.source for i in second.images]


def test_empty_directory(tmp_path):
    with pytest.raises(DatasetError):
        dataset_service.load_dataset_dir(tmp_path, size=4)


def test_empty_class_directory(tmp_path, rng):
    write_ppm(tmp_path / "a" / "0.ppm", rng.uniform(size=(3, 2, 2)))
    (tmp_path / "b").mkdir()
    with pytest.raises(DatasetError):
        dataset_service.load_dataset_dir(tmp_path, size=2)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetIOError) as exc:
        dataset_service.load_dataset_dir(tmp_path / "nowhere", size=4)
    assert exc.value.error_code == "IO_ERROR"


def test_bad_file_is_named(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "broken.jpg").write_bytes(b"\xff\xd8\xff")
    with pytest.raises(ImageFormatError) as exc:
        dataset_service.load_dataset_dir(tmp_path, size=4)
    assert "broken.jpg" in exc.value.detail


def test_write_then_load(tmp_path):
    dataset = dataset_service.generate_synthetic(SyntheticSpec(classes=3, per_class=4, size=6, seed=2))
    dataset_service.write_dataset_dir(dataset, tmp_path / "out")
    loaded = dataset_service.load_dataset_dir(tmp_path / "out", size=6)
    assert loaded.class_names == dataset.class_names
    assert loaded.labels.tolist() == dataset.labels.tolist()
    # 8-bit storage
    assert np.abs(loaded.pixels - dataset.pixels).max() <= 0.5 / 255 + 1e-6


# ============================================================================
# SYNTHETIC
# ============================================================================

def test_synthetic_shape():
    dataset = dataset_service.generate_synthetic(SyntheticSpec(classes=3, per_class=5, size=12, seed=0))
    assert dataset.pixels.shape == (15, 3, 12, 12)
    assert dataset.class_names == ["class_00", "class_01", "class_02"]
    assert dataset.pixels.min() >= 0 and dataset.pixels.max() <= 1


def test_noise_free_classes_are_constant():
    dataset = dataset_service.generate_synthetic(SyntheticSpec(classes=2, per_class=4, size=8, noise=0.0))
    for c in range(2):
        members = dataset.pixels[dataset.labels == c]
        assert all(np.array_equal(members[0], m) for m in members)


def test_synthetic_is_seeded():
    spec = SyntheticSpec(classes=3, per_class=4, size=8, seed=42)
    assert np.array_equal(dataset_service.generate_synthetic(spec).pixels,
                          dataset_service.generate_synthetic(spec).pixels)
    other = dataset_service.generate_synthetic(spec.model_copy(update={"seed": 43}))
    assert not np.array_equal(dataset_service.generate_synthetic(spec).pixels, other.pixels)


def test_classes_are_separable_by_pixels():
    dataset = dataset_service.generate_synthetic(SyntheticSpec(classes=4, per_class=8, size=16, noise=0.1, seed=3))
    flat = dataset.pixels.reshape(len(dataset), -1).astype(np.float64)
    d = ((flat[:, None] - flat[None]) ** 2).sum(axis=-1)
    same = dataset.labels[:, None] == dataset.labels[None]
    off_diag = ~np.eye(len(dataset), dtype=bool)
    assert d[same & off_diag].mean() < d[~same].mean()


def test_larger_set_starts_with_smaller_set():
    five = dataset_service.generate_synthetic(SyntheticSpec(classes=5, per_class=6, size=16, noise=0.1, seed=4))
    seven = dataset_service.generate_synthetic(SyntheticSpec(classes=7, per_class=6, size=16, noise=0.1, seed=4))
    head = seven.select_classes(seven.class_names[:5])
    assert head.class_names == five.class_names
    assert np.array_equal(head.pixels, five.pixels)
    assert head.labels.tolist() == five.labels.tolist()


@pytest.mark.parametrize("field, value", [("classes", 1), ("per_class", 3), ("noise", -0.1), ("size", 0)])
def test_synthetic_spec_limits(field, value):
    with pytest.raises(ValidationError):
        SyntheticSpec(**{field: value})
