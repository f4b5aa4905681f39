import logging

import numpy as np
import pytest

from spvd.data import (
    denormalize,
    load_ply,
    merge_small_parts,
    normalize,
    random_subset,
    sample_part_mask,
    sample_part_masks,
    synth_shape,
)
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import PointCloud, SampleMask
from tests._test_utils import resource_path


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.fixture
def skewed(rng):
    points = rng.uniform(size=(200, 3)) * np.array([4.0, 1.0, 0.5]) + np.array([10.0, -3.0, 2.0])
    return PointCloud(points, name="skewed")


def test_unit_box_normalization(skewed):
    cloud, center, scale = normalize(skewed, "per_shape_unit_box")

    low, high = skewed.points.min(axis=0), skewed.points.max(axis=0)
    assert center == pytest.approx((low + high) / 2)
    assert scale == pytest.approx((high[0] - low[0]) / 2)
    assert cloud.points[:, 0].min() == pytest.approx(-1.0)
    assert cloud.points[:, 0].max() == pytest.approx(1.0)
    assert np.abs(cloud.points).max() <= 1.0
    assert cloud.name == "skewed"


def test_unit_sphere_normalization(skewed):
    cloud, center, scale = normalize(skewed, "per_shape_unit_sphere")

    assert center == pytest.approx(skewed.points.mean(axis=0))
    assert np.linalg.norm(cloud.points, axis=1).max() == pytest.approx(1.0)
    assert cloud.points.mean(axis=0) == pytest.approx(np.zeros(3), abs=1e-12)


@pytest.mark.parametrize("mode", ["per_shape_unit_box", "per_shape_unit_sphere"])
def test_denormalize_inverts_normalize(skewed, mode):
    cloud, center, scale = normalize(skewed, mode)

    restored = denormalize(cloud, center, scale)

    assert np.allclose(restored.points, skewed.points, atol=1e-12)


def test_normalize_keeps_dtype_and_labels():
    source = load_ply(resource_path("two_parts.ply"))

    cloud, _, _ = normalize(source)

    assert cloud.points.dtype == np.float32
    assert cloud.part_ids.tolist() == source.part_ids.tolist()


def test_normalize_errors():
    point = PointCloud(np.ones((4, 3)), name="dot")

    with pytest.raises(ContractError, match="zero extent \\(dot\\)"):
        normalize(point)
    with pytest.raises(ConfigError, match="Unknown normalization"):
        normalize(PointCloud(np.eye(3)), "unit_cube")


def test_merge_small_parts():
    part_ids = np.array([0] * 60 + [1] * 39 + [2])

    merged = merge_small_parts(part_ids)

    assert merged[-1] == 0
    assert np.array_equal(merged[:99], part_ids[:99])
    assert np.array_equal(merge_small_parts(part_ids, min_fraction=0.0), part_ids)


def test_part_mask_frees_whole_parts(rng):
    shape = synth_shape("tableoid", 500, rng)
    counts = set()

    for _ in range(40):
        mask = sample_part_mask(shape.part_ids, 2, rng)
        freed = np.unique(shape.part_ids[mask.free[0]])
        counts.add(len(freed))
        assert mask.shape == (1, 500)
        assert np.array_equal(mask.free[0], np.isin(shape.part_ids, freed))

    assert counts == {1, 2}


def test_part_mask_lowers_m_to_keep_one_part(rng, caplog):
    shape = load_ply(resource_path("two_parts.ply"))

    with caplog.at_level(logging.WARNING):
        mask = sample_part_mask(shape.part_ids, 3, rng)

    assert "Lowering m from 3 to 1" in caplog.text
    assert mask.known_counts.tolist() == [3]
    assert mask.free_counts.tolist() == [3]


def test_part_mask_errors(rng):
    with pytest.raises(ContractError, match="at least two parts"):
        sample_part_mask(np.zeros(10, dtype=int), 1, rng)
    with pytest.raises(ContractError, match="m must be at least 1"):
        sample_part_mask(np.array([0, 1]), 0, rng)
    with pytest.raises(ContractError, match="shape \\(B, N\\)"):
        sample_part_masks(np.array([0, 1, 1]), 1, rng)


def test_part_masks_per_row(rng):
    rows = np.stack([synth_shape("chairoid", 300, rng).part_ids for _ in range(3)])

    mask = sample_part_masks(rows, 3, rng)

    assert mask.shape == (3, 300)
    assert (mask.free_counts > 0).all()
    assert (mask.known_counts > 0).all()


def test_random_subset_for_super_resolution(rng):
    dense = rng.normal(size=(2048, 3))

    known, mask = random_subset(dense, 512, 2048, rng)

    assert known.shape == (512, 3)
    assert mask.free_counts.tolist() == [1536]
    assert not mask.free[0, :512].any()
    assert mask.free[0, 512:].all()
    rows = {tuple(p) for p in dense}
    assert len({tuple(p) for p in known}) == 512
    assert all(tuple(p) in rows for p in known)


def test_random_subset_accepts_clouds(rng):
    cloud = PointCloud(rng.normal(size=(64, 3)))

    known, mask = random_subset(cloud, 16, 64, rng)

    assert known.shape == (16, 3)
    assert mask.known_counts.tolist() == [16]


def test_random_subset_errors(rng):
    points = rng.normal(size=(100, 3))

    with pytest.raises(ContractError, match="denser"):
        random_subset(points, 64, 64, rng)
    with pytest.raises(ContractError, match="cannot draw"):
        random_subset(points, 0, 64, rng)
    with pytest.raises(ContractError, match="cannot draw 200 of 100"):
        random_subset(points, 200, 400, rng)


def test_mask_needs_a_free_point():
    with pytest.raises(ContractError, match="samples \\[1\\]"):
        SampleMask(np.array([[True, False], [False, False]]))
