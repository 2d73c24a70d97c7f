import math

import numpy as np
import pytest

from splatslam.camera import CameraPose, Intrinsics
from splatslam.dataset import Frame
from splatslam.errors import DataError
from splatslam.scene import (GaussianMap, SemanticPalette, concatenate,
                             influence_3d, load_map, save_map,
                             select_by_labels, spawn_from_pixels)


def toy_palette():
    return SemanticPalette(
        ids=np.array([0, 1, 2, 3]),
        names=["background", "wall", "floor", "cup"],
        colors=np.array([[0, 0, 0], [0.7, 0.7, 0.7], [0.4, 0.3, 0.2], [0.9, 0.1, 0.1]]),
    )


def test_palette_validation():
    with pytest.raises(DataError):
        SemanticPalette(ids=np.array([0, 0]), names=["a", "b"],
                        colors=np.array([[0, 0, 0], [1, 1, 1]]))
    with pytest.raises(DataError):
        SemanticPalette(ids=np.array([0, 1]), names=["a", "b"],
                        colors=np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]))


def test_palette_snap_and_text_roundtrip(tmp_path):
    pal = toy_palette()
    noisy = pal.colors + np.array([0.01, -0.01, 0.005])
    np.testing.assert_array_equal(pal.nearest_ids(noisy), pal.ids)
    pal.save_text(tmp_path / "pal.txt")
    loaded = SemanticPalette.load_text(tmp_path / "pal.txt")
    np.testing.assert_array_equal(loaded.ids, pal.ids)
    assert loaded.names == pal.names
    np.testing.assert_allclose(loaded.colors, pal.colors, atol=1e-15)


def test_influence_center_is_opacity():
    gm = GaussianMap(positions=[[1.0, 2.0, 3.0]], log_radii=[math.log(0.5)],
                     opacity_logits=[math.log(0.8 / 0.2)], colors=[[1, 0, 0]],
                     semantic_colors=[[0, 1, 0]])
    assert influence_3d(gm, 0, np.array([1.0, 2.0, 3.0])) == pytest.approx(0.8, abs=1e-12)


def test_influence_one_radius_out():
    gm = GaussianMap(positions=[[0.0, 0.0, 0.0]], log_radii=[math.log(0.3)],
                     opacity_logits=[100.0],  # sigma -> 1
                     colors=[[1, 0, 0]], semantic_colors=[[0, 1, 0]])
    val = influence_3d(gm, 0, np.array([0.3, 0.0, 0.0]))
    assert val == pytest.approx(math.exp(-0.5), rel=1e-9)


def test_influence_matches_scalar_rederivation():
    rng = np.random.default_rng(8)
    for _ in range(30):
        mu = rng.normal(size=3)
        r = rng.uniform(0.05, 2.0)
        sigma = rng.uniform(0.05, 0.95)
        x = mu + rng.normal(size=3)
        gm = GaussianMap(positions=[mu], log_radii=[math.log(r)],
                         opacity_logits=[math.log(sigma / (1 - sigma))],
                         colors=[[0.5] * 3], semantic_colors=[[0.5] * 3])
        # different expression ordering: normalize the offset by r first
        scaled = (x - mu) / r
        expected = sigma * math.exp(-0.5 * float(scaled @ scaled))
        assert influence_3d(gm, 0, x) == pytest.approx(expected, rel=1e-12)


def test_influence_index_range():
    gm = GaussianMap()
    with pytest.raises(IndexError):
        influence_3d(gm, 0, np.zeros(3))


def _flat_frame(size, depth_value, color, semantic):
    color_img = np.tile(np.asarray(color, dtype=float), (size, size, 1))
    sem_img = np.tile(np.asarray(semantic, dtype=float), (size, size, 1))
    return Frame(color=color_img, depth=np.full((size, size), float(depth_value)),
                 semantic=sem_img, timestamp=0)


def test_spawn_principal_point_geometry():
    intr = Intrinsics(100, 100, 50, 50, 101, 101)
    frame = _flat_frame(101, 2.0, [0.2, 0.4, 0.6], [0.9, 0.1, 0.1])
    mask = np.zeros((101, 101), dtype=bool)
    mask[50, 50] = True  # the principal-point pixel
    delta = spawn_from_pixels(frame, CameraPose.identity(), intr, mask, toy_palette())
    assert delta.count == 1
    np.testing.assert_allclose(delta.positions[0], [0.0, 0.0, 2.0], atol=1e-12)
    assert np.exp(delta.log_radii[0]) == pytest.approx(0.02, rel=1e-12)
    np.testing.assert_allclose(delta.colors[0], [0.2, 0.4, 0.6], atol=1e-15)
    # semantic snapped to the nearest palette entry ("cup")
    np.testing.assert_allclose(delta.semantic_colors[0], [0.9, 0.1, 0.1], atol=1e-15)


def test_spawn_empty_mask():
    intr = Intrinsics(100, 100, 50, 50, 101, 101)
    frame = _flat_frame(101, 2.0, [0.5] * 3, [0.7, 0.7, 0.7])
    delta = spawn_from_pixels(frame, CameraPose.identity(), intr,
                              np.zeros((101, 101), dtype=bool), toy_palette())
    assert delta.count == 0


def test_spawn_invalid_depth_rejected():
    intr = Intrinsics(100, 100, 50, 50, 101, 101)
    frame = _flat_frame(101, 0.0, [0.5] * 3, [0.7, 0.7, 0.7])
    mask = np.ones((101, 101), dtype=bool)
    with pytest.raises(DataError):
        spawn_from_pixels(frame, CameraPose.identity(), intr, mask, toy_palette())


def test_spawn_render_roundtrip():
    """A full-mask spawn re-renders its source frame almost exactly.

    Spawned footprints overlap their neighbors, so the reconstruction is a
    ~1 px blur of the frame; the bound holds in the locally smooth regime
    (surfaces, not per-pixel noise) that densification actually encounters.
    """
    from splatslam.rasterizer import render
    intr = Intrinsics(16, 16, 7.5, 7.5, 16, 16)
    ii, jj = np.meshgrid(np.arange(16.0), np.arange(16.0), indexing="ij")
    depth = 2.0 + 0.0004 * ii + 0.0002 * jj  # gentle surface slope
    color = np.stack([0.3 + 0.001 * ii, 0.5 - 0.001 * jj,
                      np.full((16, 16), 0.6)], axis=-1)
    pal = toy_palette()
    frame = Frame(color=color, depth=depth,
                  semantic=np.tile(pal.colors[1], (16, 16, 1)), timestamp=0)
    pose = CameraPose.identity()
    delta = spawn_from_pixels(frame, pose, intr, np.ones((16, 16), dtype=bool), pal)
    assert delta.count == 256
    out = render(delta, pose, intr)
    assert np.abs(out.depth - depth).max() < 1e-3
    assert np.abs(out.color - color).max() < 1.0 / 255.0


def test_spawn_roundtrip_4x4():
    from splatslam.rasterizer import render
    intr = Intrinsics(4, 4, 1.5, 1.5, 4, 4)
    pal = toy_palette()
    depth = np.full((4, 4), 1.5)
    ii, jj = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    color = np.stack([0.4 + 0.002 * ii, 0.55 - 0.002 * jj,
                      np.full((4, 4), 0.3)], axis=-1)
    frame = Frame(color=color, depth=depth,
                  semantic=np.tile(pal.colors[2], (4, 4, 1)), timestamp=0)
    pose = CameraPose.identity()
    delta = spawn_from_pixels(frame, pose, intr, np.ones((4, 4), dtype=bool), pal)
    assert delta.count == 16
    out = render(delta, pose, intr)
    assert np.abs(out.depth - depth).max() < 1e-3
    assert np.abs(out.color - color).max() < 1.0 / 255.0


def test_select_by_labels_exhaustive_and_empty():
    pal = toy_palette()
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 4, size=40)
    gm = GaussianMap(positions=rng.normal(size=(40, 3)), log_radii=np.zeros(40),
                     opacity_logits=np.zeros(40), colors=rng.uniform(size=(40, 3)),
                     semantic_colors=pal.colors_of(labels))
    all_idx = select_by_labels(gm, pal, set(int(i) for i in pal.ids))
    np.testing.assert_array_equal(all_idx, np.arange(40))
    assert len(select_by_labels(gm, pal, set())) == 0
    with pytest.raises(DataError):
        select_by_labels(gm, pal, {42})


def test_select_by_labels_partitions():
    pal = toy_palette()
    rng = np.random.default_rng(6)
    labels = rng.integers(0, 4, size=60)
    gm = GaussianMap(positions=rng.normal(size=(60, 3)), log_radii=np.zeros(60),
                     opacity_logits=np.zeros(60), colors=rng.uniform(size=(60, 3)),
                     semantic_colors=pal.colors_of(labels))
    seen = []
    for lid in pal.ids:
        idx = select_by_labels(gm, pal, {int(lid)})
        assert len(idx) == np.count_nonzero(labels == lid)
        seen.extend(idx.tolist())
    assert sorted(seen) == list(range(60))


def test_checkpoint_roundtrip(tmp_path):
    pal = toy_palette()
    rng = np.random.default_rng(7)
    gm = GaussianMap(positions=rng.normal(size=(25, 3)),
                     log_radii=rng.normal(size=25),
                     opacity_logits=rng.normal(size=25),
                     colors=rng.uniform(size=(25, 3)),
                     semantic_colors=rng.uniform(size=(25, 3)))
    path = tmp_path / "map.gsmap"
    save_map(path, gm, pal)
    loaded, pal2 = load_map(path)
    for name in ("positions", "log_radii", "opacity_logits", "colors", "semantic_colors"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(gm, name))
    np.testing.assert_array_equal(pal2.ids, pal.ids)
    assert pal2.names == pal.names
    # deterministic bytes: saving again produces the identical file
    save_map(tmp_path / "map2.gsmap", loaded, pal2)
    assert (tmp_path / "map.gsmap").read_bytes() == (tmp_path / "map2.gsmap").read_bytes()


def test_checkpoint_bad_file(tmp_path):
    path = tmp_path / "junk.gsmap"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_map(path)
    with pytest.raises(DataError):
        load_map(tmp_path / "missing.gsmap")


def test_concatenate():
    pal = toy_palette()
    rng = np.random.default_rng(9)
    def mk(n):
        return GaussianMap(positions=rng.normal(size=(n, 3)), log_radii=np.zeros(n),
                           opacity_logits=np.zeros(n), colors=rng.uniform(size=(n, 3)),
                           semantic_colors=rng.uniform(size=(n, 3)))
    a, b = mk(4), mk(6)
    c = concatenate(a, b)
    assert c.count == 10
    np.testing.assert_array_equal(c.positions[:4], a.positions)
    np.testing.assert_array_equal(c.positions[4:], b.positions)
