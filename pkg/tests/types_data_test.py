import numpy as np
import pytest
from pandas import DataFrame

from spvd.errors import ContractError
from spvd.spvd_types import Data, PointCloud, PointCloudBatch, SampleMask


@pytest.fixture
def report():
    return {
        "rule": "ddim",
        "losses": {
            "rows": [
                {"step": 1, "loss": 1.25, "lr": 0.002},
                {"step": 2, "loss": 1.0, "lr": 0.001},
            ],
        },
        "files": ["sample_0000.ply", "sample_0001.ply"],
    }


def test_to_df(report):
    """Data can be extracted into a data frame."""

    # Create a data frame with a nested selector.
    df = Data.to_df(report, "losses.rows")

    assert type(df) == DataFrame
    assert df.to_numpy().tolist() == [[1, 1.25, 0.002], [2, 1.0, 0.001]]

    # A list of scalars becomes a single column.
    df = Data.to_df(report, "files")

    assert df[0].tolist() == ["sample_0000.ply", "sample_0001.ply"]

    # Without a selector the whole document is flattened into one row.
    df = Data.to_df({"cov_cd": 50.0, "mmd_cd": 0.01}, None)

    assert df.to_numpy().tolist() == [[50.0, 0.01]]


def test_df_property(report):
    """Verify that the data frame is generated and cached."""

    data = Data(report, selector="losses.rows")

    # The data frame cache should initially be None.
    assert data._df is None

    df = data.df
    assert list(df.columns) == ["step", "loss", "lr"]

    # Verify that the data has been cached.
    assert data._df is df

    # Finally, confirm that the original JSON data has not been modified.
    assert data.json == report


def test_point_cloud_shapes():
    cloud = PointCloud(np.zeros((4, 3)), part_ids=[0, 0, 1, 1], class_id=2)

    assert len(cloud) == 4
    assert cloud.part_ids.dtype == np.int64

    with pytest.raises(ValueError, match=r"shape \(N, 3\)"):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError, match="every point"):
        PointCloud(np.zeros((4, 3)), part_ids=[0, 1])


def test_batch_splits_into_clouds():
    batch = PointCloudBatch(
        np.arange(24, dtype=float).reshape(2, 4, 3),
        part_ids=np.zeros((2, 4), dtype=int),
        class_ids=[3, 1],
    )

    clouds = batch.clouds()

    assert (batch.batch_size, batch.num_points) == (2, 4)
    assert [c.class_id for c in clouds] == [3, 1]
    assert np.array_equal(clouds[1].points, batch.points[1])

    with pytest.raises(ValueError, match=r"\(B,\)"):
        PointCloudBatch(np.zeros((2, 4, 3)), class_ids=[1])


def test_sample_mask_counts():
    mask = SampleMask(np.array([[True, False, True], [True, True, True]]))

    assert mask.shape == (2, 3)
    assert mask.free_counts.tolist() == [2, 3]
    assert mask.known_counts.tolist() == [1, 0]
    assert mask.known[0].tolist() == [False, True, False]

    # A single row is promoted to a batch of one.
    assert SampleMask(np.array([True, False])).shape == (1, 2)
    assert SampleMask.stack([SampleMask.all_free(1, 3), mask]).shape == (3, 3)

    with pytest.raises(ContractError, match="FREE point"):
        SampleMask(np.array([[True, True], [False, False]]))
