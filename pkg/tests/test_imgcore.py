import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from cellpheno.imgcore import (ArtifactFilter, GeometricSpec, TileGrid, artifact_score, augment_geometric,
                               extract_patch, filter_tiles, load_png, random_geometric_spec, save_png, split_tiles)

from conftest import rgb


@pytest.mark.parametrize("w,h,expected", [(4800, 3600, 9), (1600, 1200, 1), (1700, 1300, 1), (3300, 1200, 2)])
def test_split_tiles_counts(w, h, expected):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    tiles = split_tiles(img, TileGrid())
    assert len(tiles) == expected
    assert all(t.shape == (1200, 1600, 3) for _, t in tiles)


def test_split_tiles_identity_and_offsets():
    img = rgb(1300, 1700)
    tiles = split_tiles(img, TileGrid())
    (off, tile), = tiles
    assert (off.x, off.y) == (0, 0)
    assert np.array_equal(tile, img[:1200, :1600])
    assert off.to_json() == {"x": 0, "y": 0, "width": 1600, "height": 1200}


def test_split_tiles_rejects_oversized_tile():
    with pytest.raises(ValueError):
        split_tiles(np.zeros((100, 100, 3), np.uint8), TileGrid(200, 50))


@given(st.integers(5, 60), st.integers(5, 60), st.integers(1, 20), st.integers(1, 20))
def test_split_tiles_disjoint_cover(w, h, tw, th):
    if tw > w or th > h:
        return
    img = rgb(h, w, seed=w * 100 + h)
    tiles = split_tiles(img, TileGrid(tw, th))
    assert len(tiles) == (w // tw) * (h // th)
    cover = np.zeros((h, w), dtype=int)
    for off, t in tiles:
        cover[off.y:off.y + off.height, off.x:off.x + off.width] += 1
        assert np.array_equal(t, img[off.y:off.y + th, off.x:off.x + tw])
    assert cover.max() == 1
    assert cover.sum() == (w // tw) * (h // th) * tw * th


def test_extract_patch_interior_is_plain_crop():
    img = rgb(600, 800)
    p = extract_patch(img, (400, 300), 200)
    assert p.padded_fraction == 0
    assert np.array_equal(p.pixels, img[200:400, 300:500])


def test_extract_patch_corner_reflects():
    img = rgb(300, 300)
    p = extract_patch(img, (0, 0), 200)
    assert p.pixels.shape == (200, 200, 3)
    assert p.padded_fraction == pytest.approx(0.75)
    # bottom-right quadrant is the image itself, the rest mirrors it
    assert np.array_equal(p.pixels[100:, 100:], img[:100, :100])
    assert np.array_equal(p.pixels[99, 100:], img[1, :100])


def test_extract_patch_constant_image():
    img = np.full((50, 70, 3), 123, dtype=np.uint8)
    p = extract_patch(img, (69.5, 0.2), 40)
    assert (p.pixels == 123).all()


def test_extract_patch_outside_raises():
    with pytest.raises(ValueError):
        extract_patch(rgb(10, 10), (10, 5), 4)


@given(st.floats(0, 79.99), st.floats(0, 59.99), st.integers(1, 64))
def test_extract_patch_always_square(cx, cy, side):
    p = extract_patch(rgb(60, 80, seed=3), (cx, cy), side)
    assert p.pixels.shape == (side, side, 3)
    assert 0.0 <= p.padded_fraction < 1.0


def test_artifact_score_white_and_dark():
    assert artifact_score(np.full((32, 32, 3), 255, np.uint8)) == (0.0, 0.0)
    assert artifact_score(np.zeros((32, 32, 3), np.uint8))[1] == 1.0


def test_artifact_score_blur_orders_checkerboard():
    yy, xx = np.mgrid[:64, :64]
    board = (((yy // 4 + xx // 4) % 2) * 255).astype(np.uint8)
    sharp = np.repeat(board[..., None], 3, axis=2)
    blurred = ndimage.uniform_filter(sharp.astype(float), size=(5, 5, 1)).round().astype(np.uint8)
    assert artifact_score(sharp)[0] > artifact_score(blurred)[0]


def test_filter_tiles_reasons_and_exclusion():
    white = np.full((16, 16, 3), 255, np.uint8)
    busy = rgb(16, 16, seed=9)
    kept, rejected = filter_tiles([("a", white), ("b", busy), ("c", busy)], ArtifactFilter(), exclude=["c"])
    assert [k for k, _ in kept] == ["b"]
    assert dict(rejected) == {"a": ["blurred", "background"], "c": ["excluded"]}


def test_augment_involutions():
    img = rgb(20, 30)
    h = GeometricSpec(hflip=True)
    assert np.array_equal(augment_geometric(augment_geometric(img, h), h), img)
    r = GeometricSpec(rot90_k=1)
    out = img
    for _ in range(4):
        out = augment_geometric(out, r)
    assert np.array_equal(out, img)
    assert np.array_equal(augment_geometric(img, GeometricSpec()), img)


@given(st.integers(0, 2**32 - 1))
def test_augment_keeps_square_shape(seed):
    img = rgb(16, 16, seed=seed % 1000)
    spec = random_geometric_spec(np.random.default_rng(seed))
    assert abs(spec.shear_factor) <= 0.2
    assert augment_geometric(img, spec).shape == img.shape


def test_augment_rejects_large_shear():
    with pytest.raises(ValueError):
        augment_geometric(rgb(8, 8), GeometricSpec(shear_factor=0.5))


def test_png_round_trip(tmp_path):
    img = rgb(17, 23)
    save_png(tmp_path / "x.png", img)
    assert np.array_equal(load_png(tmp_path / "x.png"), img)
