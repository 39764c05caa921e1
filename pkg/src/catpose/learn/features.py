"""Per-instance network inputs and targets.

The image branch is replaced by per-pixel observation features: the pixel
position inside the detection box (scaled to [-1, 1]) and a synthetic
local descriptor. The descriptor stands in for what a CNN reads from
appearance at that pixel: which part of the object it sees (its canonical
coordinate) and the local metric shape relative to the object centre.
Both come with Gaussian noise; neither carries the absolute position of
the object, which the network can only get from the position hints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import back_project, ngph_encode
from ..synth.scene import Dataset, SceneInstance

OBS_DIM = 8
# metric offsets are scaled to roughly unit range before entering the network
OFFSET_SCALE = 10.0


@dataclass(frozen=True)
class DescriptorNoise:
    nocs: float = 0.02
    offset: float = 0.001
    """Standard deviations: canonical units and meters."""


def observation_features(inst: SceneInstance, rng: np.random.Generator, noise: DescriptorNoise = DescriptorNoise()) -> np.ndarray:
    bbox = inst.bbox
    pix = inst.depth_patch.pixels
    u = 2.0 * (pix[:, 0] - bbox.l) / bbox.width - 1.0
    v = 2.0 * (pix[:, 1] - bbox.t) / bbox.height - 1.0
    nocs = inst.gt_nocs + rng.normal(0.0, noise.nocs, size=inst.gt_nocs.shape)
    rel = back_project(inst.depth_patch, inst.intrinsics) - inst.gt_pose.translation
    rel = rel + rng.normal(0.0, noise.offset, size=rel.shape)
    return np.column_stack([u, v, nocs, OFFSET_SCALE * rel])


@dataclass
class Batch:
    obs: np.ndarray  # (B, N_p, OBS_DIM)
    pixels: np.ndarray  # (B, N_p, 2)
    intrinsics: np.ndarray  # (B, 4): fx, fy, cx, cy
    ngph: np.ndarray  # (B, 6)
    prior: np.ndarray  # (B, N_m, 3)
    gt_depth: np.ndarray  # (B, N_p)
    gt_nocs: np.ndarray  # (B, N_p, 3)
    model: np.ndarray  # (B, N_m, 3)
    ids: list[int]
    categories: list[str]

    def __len__(self):
        return len(self.ids)

    def subset(self, idx: Sequence[int]) -> "Batch":
        idx = list(idx)
        return Batch(
            self.obs[idx],
            self.pixels[idx],
            self.intrinsics[idx],
            self.ngph[idx],
            self.prior[idx],
            self.gt_depth[idx],
            self.gt_nocs[idx],
            self.model[idx],
            [self.ids[i] for i in idx],
            [self.categories[i] for i in idx],
        )


def descriptor_rng(seed: int, instance_id: int, epoch: int | None) -> np.random.Generator:
    """Noise stream for one instance; ``epoch=None`` is the fixed evaluation draw."""
    key = [seed, instance_id, 1] if epoch is None else [seed, instance_id, 2, epoch]
    return np.random.default_rng(key)


def make_batch(
    dataset: Dataset,
    instances: Sequence[SceneInstance],
    seed: int = 0,
    epoch: int | None = None,
    noise: DescriptorNoise = DescriptorNoise(),
) -> Batch:
    obs, pixels, intr, ngph, prior, depth, nocs, model = [], [], [], [], [], [], [], []
    for inst in instances:
        obs.append(observation_features(inst, descriptor_rng(seed, inst.id, epoch), noise))
        pixels.append(inst.depth_patch.pixels)
        k = inst.intrinsics
        intr.append([k.fx, k.fy, k.cx, k.cy])
        ngph.append(ngph_encode(inst.bbox, k))
        prior.append(dataset.priors[inst.category])
        depth.append(inst.depth_patch.depths)
        nocs.append(inst.gt_nocs)
        model.append(inst.model)
    return Batch(
        np.array(obs),
        np.array(pixels),
        np.array(intr, dtype=float),
        np.array(ngph),
        np.array(prior),
        np.array(depth),
        np.array(nocs),
        np.array(model),
        [inst.id for inst in instances],
        [inst.category for inst in instances],
    )
