from spvd.data.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from spvd.data.dataset import Dataset, load_manifest, save_manifest
from spvd.data.point_io import (
    load_cloud,
    load_directory,
    load_ply,
    load_xyz,
    save_ply,
    save_xyz,
)
from spvd.data.synthetic import KINDS, PART_NAMES, synth_dataset, synth_shape
from spvd.data.transforms import (
    NORMALIZATION_MODES,
    denormalize,
    merge_small_parts,
    normalize,
    random_subset,
    sample_part_mask,
    sample_part_masks,
)
