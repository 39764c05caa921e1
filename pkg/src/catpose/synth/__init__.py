"""Synthetic scene oracle and file formats."""

from .io import (
    Prediction,
    read_dataset,
    read_predictions,
    write_dataset,
    write_ply,
    write_predictions,
)
from .scene import (
    DEFAULT_CATEGORIES,
    DEFAULT_INTRINSICS,
    CategoryInfo,
    CategorySpec,
    Dataset,
    InstanceDeformation,
    SceneInstance,
    category_by_name,
    generate_dataset,
    make_prior,
    sample_instance,
)
