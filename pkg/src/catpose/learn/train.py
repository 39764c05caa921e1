"""Training loop, inference to pose predictions, checkpoints and loss logs."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import DegenerateConfigurationError, InvalidInputError, ParseError, TrainingDiverged
from ..evaluation import EvalReport, evaluate
from ..geometry import back_project_arrays, umeyama_align
from ..spd import LossTerms, LossWeights
from ..synth.io import Prediction
from ..synth.scene import Dataset, SceneInstance
from .features import DescriptorNoise, make_batch
from .model import Discriminator, ModelConfig, SddrModel, discriminator_loss_and_grads, loss_and_grads
from .nn import Adam

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "catpose-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("step", "l_z", "l_d", "l_g", "l_corr", "l_cd", "l_entro", "l_reg", "total")
VARIANTS = ("full", "no_ngph", "no_decouple", "direct_regression", "no_adversarial")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 3e-3
    lr_disc: float = 1e-4
    lr_decay: float = 0.1
    decay_at: float = 0.8
    """Fraction of the epochs after which the learning rates are multiplied by ``lr_decay``."""
    seed: int = 0
    adversarial: bool = True
    weights: LossWeights = LossWeights()
    noise: DescriptorNoise = DescriptorNoise()
    model: ModelConfig = ModelConfig(c_g=128, head_hidden=(128, 64))

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs must be non-negative and batch_size positive")
        if not (self.lr >= 0 and self.lr_disc >= 0 and self.lr_decay > 0):
            raise InvalidInputError("learning rates must be non-negative and the decay positive")
        if not 0.0 <= self.decay_at <= 1.0:
            raise InvalidInputError("decay_at must lie in [0, 1]")


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    """Training configuration for one of the named ablation variants."""
    m = base.model
    if variant == "full":
        return base
    if variant == "no_ngph":
        return replace(base, model=replace(m, use_ngph=False))
    if variant == "no_decouple":
        return replace(base, model=replace(m, decouple=False))
    if variant == "direct_regression":
        return replace(base, model=replace(m, shape_prior=False))
    if variant == "no_adversarial":
        return replace(base, adversarial=False)
    raise InvalidInputError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")


@dataclass
class HistoryRow:
    step: int
    terms: LossTerms
    total: float

    def as_row(self) -> list:
        return [self.step, *self.terms.as_array().tolist(), self.total]


@dataclass
class TrainResult:
    model: SddrModel
    disc: Discriminator | None
    config: TrainConfig
    history: list[HistoryRow] = field(default_factory=list)


def _check_finite(terms: LossTerms, total: float, step: int) -> None:
    if not (math.isfinite(total) and np.all(np.isfinite(terms.as_array()))):
        raise TrainingDiverged(f"non-finite loss at step {step}: {terms}")


def train(
    dataset: Dataset,
    instances: Sequence[SceneInstance] | None = None,
    config: TrainConfig = TrainConfig(),
    callback: Callable[[HistoryRow], None] | None = None,
) -> TrainResult:
    """Alternating discriminator / network Adam updates over shuffled mini-batches."""
    instances = list(dataset.instances if instances is None else instances)
    if not instances:
        raise InvalidInputError("no training instances")
    mcfg = replace(config.model, n_prior=dataset.n_prior)
    model = SddrModel(mcfg, seed=config.seed)
    disc = Discriminator(mcfg, seed=config.seed) if config.adversarial else None
    opt = Adam(model.params, config.lr)
    opt_d = Adam(disc.params, config.lr_disc) if disc else None
    result = TrainResult(model, disc, config)
    rng = np.random.default_rng([config.seed, 303])
    decay_epoch = int(round(config.decay_at * config.epochs))
    step = 0
    for epoch in range(config.epochs):
        if epoch == decay_epoch and epoch > 0:
            opt.lr *= config.lr_decay
            if opt_d:
                opt_d.lr *= config.lr_decay
        order = rng.permutation(len(instances))
        for start in range(0, len(order), config.batch_size):
            chunk = [instances[i] for i in order[start : start + config.batch_size]]
            batch = make_batch(dataset, chunk, seed=config.seed, epoch=epoch, noise=config.noise)
            if disc is not None:
                fake = model.forward(batch).nocs
                _, d_grads = discriminator_loss_and_grads(disc, batch.gt_nocs, fake)
                opt_d.step(disc.params, d_grads)
            terms, total, grads, _, _ = loss_and_grads(model, disc, batch, config.weights)
            _check_finite(terms, total, step)
            opt.step(model.params, grads)
            row = HistoryRow(step, terms, total)
            result.history.append(row)
            if callback:
                callback(row)
            step += 1
        log.debug("epoch %d: total %.5f", epoch, result.history[-1].total)
    return result


def write_history(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row.step, *(repr(float(x)) for x in row.as_row()[1:])])


def read_history(path) -> list[HistoryRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HISTORY_COLUMNS:
        raise ParseError(f"{path}: expected header {','.join(HISTORY_COLUMNS)}", line=1)
    out = []
    for no, r in enumerate(rows[1:], start=2):
        try:
            vals = [float(x) for x in r[1:]]
            out.append(HistoryRow(int(r[0]), LossTerms(*vals[:7]), vals[7]))
        except (ValueError, TypeError, IndexError) as exc:
            raise ParseError(f"{path}: bad row ({exc})", line=no) from None
    return out


# ---------------------------------------------------------------- inference


def predict_instance(out_nocs, deformed, cam_points, inst: SceneInstance) -> Prediction | None:
    """Similarity alignment of predicted canonical points to predicted camera points."""
    try:
        pose = umeyama_align(out_nocs, cam_points)
    except DegenerateConfigurationError:
        return None
    lo, hi = deformed.min(axis=0), deformed.max(axis=0)
    size = pose.scale * (hi - lo)
    if not np.all(size > 0):
        return None
    center = pose.apply(0.5 * (lo + hi)[None])[0]
    return Prediction(inst.id, inst.category, pose, size, center)


def predict(
    model: SddrModel,
    dataset: Dataset,
    instances: Sequence[SceneInstance] | None = None,
    seed: int = 0,
    batch_size: int = 64,
    noise: DescriptorNoise = DescriptorNoise(),
) -> list[Prediction]:
    """Predictions for every instance where the alignment is well posed."""
    instances = list(dataset.instances if instances is None else instances)
    preds = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        batch = make_batch(dataset, chunk, seed=seed, epoch=None, noise=noise)
        out = model.forward(batch)
        for i, inst in enumerate(chunk):
            k = inst.intrinsics
            cam = back_project_arrays(batch.pixels[i], out.depth[i], k)
            deformed = out.nocs[i] if out.deform_nocs is None else batch.prior[i] + out.deform_nocs[i]
            p = predict_instance(out.nocs[i], deformed, cam, inst)
            if p is not None:
                preds.append(p)
    return preds


@dataclass
class ModelEvaluation:
    report: EvalReport
    predictions: list[Prediction]
    depth_l1: float
    """Mean absolute error of the assembled depth over all evaluated pixels, in meters."""


def evaluate_model(
    model: SddrModel,
    dataset: Dataset,
    instances: Sequence[SceneInstance] | None = None,
    seed: int = 0,
    noise: DescriptorNoise = DescriptorNoise(),
    with_curves: bool = True,
) -> ModelEvaluation:
    """Predict, align and score; failed alignments count as missed ground truth."""
    instances = list(dataset.instances if instances is None else instances)
    preds = predict(model, dataset, instances, seed=seed, noise=noise)
    errs = []
    for start in range(0, len(instances), 64):
        batch = make_batch(dataset, instances[start : start + 64], seed=seed, epoch=None, noise=noise)
        errs.append(np.abs(model.forward(batch).depth - batch.gt_depth).ravel())
    depth_l1 = float(np.concatenate(errs).mean()) if errs else float("nan")
    report = evaluate(
        [p.to_detection() for p in preds],
        [i.as_detection() for i in instances],
        dataset.symmetric_categories,
        with_curves=with_curves,
    )
    return ModelEvaluation(report, preds, depth_l1)


def oracle_predictions(instances: Sequence[SceneInstance]) -> list[Prediction]:
    """Ground truth written as predictions; scores 1.0 on every metric."""
    return [Prediction(i.id, i.category, i.gt_pose, i.gt_size.copy()) for i in instances]


# ---------------------------------------------------------------- checkpoints


def _tensors(result_model: SddrModel, disc: Discriminator | None) -> dict[str, np.ndarray]:
    tensors = dict(result_model.params)
    if disc is not None:
        tensors.update(disc.params)
    return tensors


def save_checkpoint(model: SddrModel, path, disc: Discriminator | None = None, binary: bool = False, meta: dict | None = None) -> None:
    tensors = _tensors(model, disc)
    names = sorted(tensors)
    header = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "format": "binary" if binary else "text",
        "model": model.config.to_dict(),
        "discriminator": disc is not None,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for n in names:
            arr = np.ascontiguousarray(tensors[n], dtype="<f8")
            if binary:
                fh.write(arr.tobytes())
            else:
                fh.write((" ".join(repr(float(x)) for x in arr.ravel()) + "\n").encode())


def load_checkpoint(path) -> tuple[SddrModel, Discriminator | None, dict]:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[: nl if nl >= 0 else len(raw)])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ParseError(f"{path}: unreadable checkpoint header", line=1) from None
    if not isinstance(header, dict) or header.get("kind") != CHECKPOINT_KIND:
        raise ParseError(f"{path}: not a checkpoint", line=1)
    if header.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {header.get('version')!r}", line=1)
    try:
        cfg = ModelConfig.from_dict(header["model"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad model config ({exc})", line=1) from None
    body = raw[nl + 1 :]
    tensors = {}
    specs = header["tensors"]
    if header["format"] == "binary":
        offset = 0
        for s in specs:
            n = int(np.prod(s["shape"], dtype=int))
            chunk = body[offset : offset + 8 * n]
            if len(chunk) != 8 * n:
                raise ParseError(f"{path}: truncated tensor {s['name']}", line=1)
            tensors[s["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(s["shape"]).copy()
            offset += 8 * n
    else:
        lines = body.decode().splitlines()
        if len(lines) != len(specs):
            raise ParseError(f"{path}: expected {len(specs)} tensor lines, found {len(lines)}", line=1)
        for no, (s, line) in enumerate(zip(specs, lines), start=2):
            try:
                vals = np.array([float(x) for x in line.split()], dtype=float)
                tensors[s["name"]] = vals.reshape(s["shape"])
            except ValueError as exc:
                raise ParseError(f"{path}: bad tensor {s['name']} ({exc})", line=no) from None
    model = SddrModel(cfg)
    disc = Discriminator(cfg) if header.get("discriminator") else None
    try:
        model.load_params(tensors)
        if disc is not None:
            disc.load_params(tensors)
    except InvalidInputError as exc:
        raise ParseError(f"{path}: {exc}", line=1) from None
    return model, disc, header.get("meta", {})


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["model"] = cfg.model.to_dict()
    return d
