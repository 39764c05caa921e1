"""Toy object-level depth network with shape-prior heads and a point discriminator.

Data flow for a batch:

    obs pixels ──obs_enc──> f_obs ──pool──> f_g_obs
    prior      ──pri_enc──> f_pri ──pool──> f_g_pri
    hints      ──pos_enc──> f_pos
    depth:  D_depth(f_pri | globals), M_depth(f_obs | globals)
            P_depth = M_depth (prior + D_depth);  Z = P_depth.z + Z_t(f_pos, f_g_obs)
    nocs:   back-project Z ──depth_enc──> f_dep ──pool──> f_g_dep
            P_nocs = M_nocs (prior + D_nocs)

Every stage has an explicit backward pass; gradients of the full weighted
loss reach all parameters, including through the back-projection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..spd import LossTerms, LossWeights, smooth_l1
from .features import OBS_DIM, OFFSET_SCALE, Batch
from .nn import Mlp, max_pool, max_pool_backward, mean_pool, mean_pool_backward, softmax, softmax_backward


@dataclass(frozen=True)
class ModelConfig:
    c: int = 64
    c_g: int = 256
    n_prior: int = 128
    obs_dim: int = OBS_DIM
    enc_hidden: int = 64
    head_hidden: tuple[int, ...] = (256, 128)
    key_dim: int = 32
    trans_hidden: tuple[int, ...] = (128, 64)
    disc_hidden: int = 64
    disc_feature: int = 128
    use_ngph: bool = True
    decouple: bool = True
    shape_prior: bool = True
    ngph_to_nocs: bool = False
    pool: str = "max"

    def __post_init__(self):
        if self.pool not in ("max", "mean"):
            raise InvalidInputError(f"pool must be 'max' or 'mean', got {self.pool!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        d["trans_hidden"] = list(self.trans_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_hidden"] = tuple(d["head_hidden"])
        d["trans_hidden"] = tuple(d["trans_hidden"])
        return cls(**d)


class _Module:
    mlps: list[Mlp]

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for mlp in self.mlps:
            out.update(mlp.params)
        return out

    @property
    def parameter_count(self) -> int:
        return sum(m.parameter_count for m in self.mlps)

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params
        missing = set(own) - set(params)
        if missing:
            raise InvalidInputError(f"missing parameters: {sorted(missing)[:5]}")
        for mlp in self.mlps:
            for k in mlp.params:
                if params[k].shape != mlp.params[k].shape:
                    raise InvalidInputError(f"shape mismatch for {k}: {params[k].shape} vs {mlp.params[k].shape}")
                mlp.params[k][...] = params[k]


class AssignHead:
    """Assignment logits as scaled dot products between point queries and prior-point keys.

    Each key carries one extra channel used as a per-prior-point bias, so
    ``logits[i, j] = <q_i, k_j> / sqrt(d) + b_j``. Any number of prior points
    works, and a zero network gives uniform rows.
    """

    def __init__(self, name: str, query_dims, key_dims, hidden, key_dim: int, rng: np.random.Generator):
        self.key_dim = key_dim
        self.query = Mlp(f"{name}.q", query_dims, hidden, key_dim, rng)
        self.key = Mlp(f"{name}.k", key_dims, hidden, key_dim + 1, rng)
        self.mlps = [self.query, self.key]

    def forward(self, query_inputs, key_inputs):
        q, cq = self.query.forward(query_inputs)
        k, ck = self.key.forward(key_inputs)
        d = self.key_dim
        logits = np.einsum("bid,bjd->bij", q, k[..., :d]) / np.sqrt(d) + k[..., d][:, None, :]
        return logits, (q, k, cq, ck)

    def backward(self, cache, d_logits):
        q, k, cq, ck = cache
        d = self.key_dim
        d_q = np.einsum("bij,bjd->bid", d_logits, k[..., :d]) / np.sqrt(d)
        d_k = np.empty_like(k)
        d_k[..., :d] = np.einsum("bij,bid->bjd", d_logits, q) / np.sqrt(d)
        d_k[..., d] = d_logits.sum(axis=1)
        q_in, gq = self.query.backward(cq, d_q)
        k_in, gk = self.key.backward(ck, d_k)
        gq.update(gk)
        return q_in, k_in, gq


def lift_observations(obs: np.ndarray, hints: np.ndarray) -> np.ndarray:
    """Append per-pixel viewing rays and perspective-corrected lateral offsets.

    The ray of a pixel follows from its box-relative position and the hints;
    ``offset_xy - offset_z * ray`` removes the lateral shift that depth
    variation across the object causes under perspective. Zero hints give
    zero rays, so no position information leaks in without them.
    """
    g = hints[:, None, :]
    ray_x = g[..., 2] + 0.5 * (obs[..., 0] + 1.0) * (g[..., 4] - g[..., 2])
    ray_y = g[..., 3] + 0.5 * (obs[..., 1] + 1.0) * (g[..., 5] - g[..., 3])
    off = obs[..., OBS_DIM - 3 :]
    lateral = off[..., :2] - off[..., 2:3] * np.stack([ray_x, ray_y], axis=-1)
    return np.concatenate([obs, ray_x[..., None], ray_y[..., None], lateral], axis=-1)


LIFT_DIM = 4


def observation_extent(lifted: np.ndarray) -> np.ndarray:
    """Per-instance range (max minus min over points) of every lifted channel.

    The range of the lateral offsets divided by the range of the rays is the
    object depth, so handing the ranges straight to the translation head lets
    it read off a metric width without learning it through the point encoder.
    """
    return lifted.max(axis=1) - lifted.min(axis=1)


@dataclass
class Outputs:
    z_t: np.ndarray | None  # (B,)
    depth: np.ndarray  # (B, N_p) assembled Z
    shape_points: np.ndarray  # (B, N_p, 3)
    camera_points: np.ndarray  # (B, N_p, 3)
    nocs: np.ndarray  # (B, N_p, 3)
    deform_depth: np.ndarray | None = None
    assign_depth: np.ndarray | None = None
    deform_nocs: np.ndarray | None = None
    assign_nocs: np.ndarray | None = None
    assign_nocs_logits: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)


class SddrModel(_Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = cfg = config
        rng = np.random.default_rng([seed, 101])
        c, cg, hh, kd = cfg.c, cfg.c_g, cfg.head_hidden, cfg.key_dim
        self.obs_enc = Mlp("obs_enc", [cfg.obs_dim + LIFT_DIM], [cfg.enc_hidden], c, rng, out_activation="relu")
        self.pri_enc = Mlp("pri_enc", [3], [cfg.enc_hidden], c, rng, out_activation="relu")
        self.pos_enc = Mlp("pos_enc", [6], [cfg.enc_hidden], 2 * c, rng, out_activation="relu")
        self.obs_glob = Mlp("obs_glob", [c], [], cg, rng, out_activation="relu")
        self.pri_glob = Mlp("pri_glob", [c], [], cg, rng, out_activation="relu")
        self.mlps = [self.obs_enc, self.pri_enc, self.pos_enc, self.obs_glob, self.pri_glob]
        depth_glob_dims = [cg, cg, 2 * c]
        if cfg.shape_prior:
            self.depth_deform = Mlp("depth_deform", [c, *depth_glob_dims], hh, 3, rng)
            self.depth_assign = AssignHead("depth_assign", [c, *depth_glob_dims], [c, *depth_glob_dims], hh, kd, rng)
            self.mlps += [self.depth_deform, *self.depth_assign.mlps]
        else:
            self.depth_direct = Mlp("depth_direct", [c, *depth_glob_dims], hh, 3, rng)
            self.mlps.append(self.depth_direct)
        if cfg.decouple:
            self.trans_head = Mlp("trans_head", [2 * c, cfg.obs_dim + LIFT_DIM], cfg.trans_hidden, 1, rng)
            self.mlps.append(self.trans_head)
        self.depth_enc = Mlp("depth_enc", [3], [cfg.enc_hidden], c, rng, out_activation="relu")
        self.depth_glob = Mlp("depth_glob", [c], [], cg, rng, out_activation="relu")
        self.mlps += [self.depth_enc, self.depth_glob]
        nocs_glob_dims = [cg, cg, cg] + ([2 * c] if cfg.ngph_to_nocs else [])
        if cfg.shape_prior:
            self.nocs_deform = Mlp("nocs_deform", [c, *nocs_glob_dims], hh, 3, rng)
            self.nocs_assign = AssignHead("nocs_assign", [c, c, *nocs_glob_dims], [c, *nocs_glob_dims], hh, kd, rng)
            self.mlps += [self.nocs_deform, *self.nocs_assign.mlps]
        else:
            self.nocs_direct = Mlp("nocs_direct", [c, c, *nocs_glob_dims], hh, 3, rng)
            self.mlps.append(self.nocs_direct)

    def _pool(self, x: np.ndarray, cache: dict, key: str) -> np.ndarray:
        if self.config.pool == "max":
            out, cache[key] = max_pool(x)
            return out
        cache[key] = None
        return mean_pool(x)

    def _unpool(self, grad: np.ndarray, cache: dict, key: str, n: int) -> np.ndarray:
        if self.config.pool == "max":
            return max_pool_backward(grad, cache[key], n)
        return mean_pool_backward(grad, n)

    def _check(self, batch: Batch):
        if batch.obs.ndim != 3 or batch.obs.shape[-1] != self.config.obs_dim:
            raise InvalidInputError(f"observations must be (B, N, {self.config.obs_dim}), got {batch.obs.shape}")
        if batch.prior.ndim != 3 or batch.prior.shape[1:] != (self.config.n_prior, 3):
            raise InvalidInputError(f"prior must be (B, {self.config.n_prior}, 3), got {batch.prior.shape}")
        if batch.ngph.shape != (len(batch.obs), 6):
            raise InvalidInputError(f"position hints must be (B, 6), got {batch.ngph.shape}")
        if batch.pixels.shape != batch.obs.shape[:2] + (2,) or batch.intrinsics.shape != (len(batch.obs), 4):
            raise InvalidInputError("pixels or intrinsics do not match the observations")

    def forward(self, batch: Batch) -> Outputs:
        self._check(batch)
        cfg = self.config
        cache = {}
        prior = batch.prior
        n_p = batch.obs.shape[1]
        n_m = prior.shape[1]

        hints = batch.ngph if cfg.use_ngph else np.zeros_like(batch.ngph)
        lifted = lift_observations(batch.obs, hints)
        f_obs, cache["obs_enc"] = self.obs_enc.forward([lifted])
        f_pri, cache["pri_enc"] = self.pri_enc.forward([prior])
        f_pos, cache["pos_enc"] = self.pos_enc.forward([hints])
        g, cache["obs_glob"] = self.obs_glob.forward([f_obs])
        f_g_obs = self._pool(g, cache, "obs_pool")
        g, cache["pri_glob"] = self.pri_glob.forward([f_pri])
        f_g_pri = self._pool(g, cache, "pri_pool")
        globals_d = [f_g_obs, f_g_pri, f_pos]

        out = Outputs(None, None, None, None, None, cache=cache)
        if cfg.shape_prior:
            d_depth, cache["depth_deform"] = self.depth_deform.forward([f_pri, *globals_d])
            if cfg.decouple:
                # a common shift of the depth-side field would trade off against the translation; fix it to zero
                d_depth = d_depth - d_depth.mean(axis=1, keepdims=True)
            logits, cache["depth_assign"] = self.depth_assign.forward([f_obs, *globals_d], [f_pri, *globals_d])
            m_depth = softmax(logits)
            deformed = prior + d_depth
            shape_points = m_depth @ deformed
            out.deform_depth, out.assign_depth = d_depth, m_depth
            cache["deformed_depth"] = deformed
        else:
            shape_points, cache["depth_direct"] = self.depth_direct.forward([f_obs, *globals_d])

        if cfg.decouple:
            z_t, cache["trans_head"] = self.trans_head.forward([f_pos, observation_extent(lifted)])
            # with hints the head predicts a metric width; g0 = fx / box width turns it into depth
            cache["z_t_scale"] = scale = hints[:, :1] if cfg.use_ngph else np.ones((len(z_t), 1))
            z_t = scale * z_t
            out.z_t = z_t[:, 0]
            depth = shape_points[..., 2] + z_t
        else:
            depth = shape_points[..., 2].copy()

        fx, fy, cx, cy = (batch.intrinsics[:, k : k + 1] for k in range(4))
        ray_x = (batch.pixels[..., 0] - cx) / fx
        ray_y = (batch.pixels[..., 1] - cy) / fy
        cam = np.stack([depth * ray_x, depth * ray_y, depth], axis=-1)
        centred = OFFSET_SCALE * (cam - cam.mean(axis=1, keepdims=True))
        cache["rays"] = (ray_x, ray_y)

        f_dep, cache["depth_enc"] = self.depth_enc.forward([centred])
        g, cache["depth_glob"] = self.depth_glob.forward([f_dep])
        f_g_dep = self._pool(g, cache, "dep_pool")
        globals_n = [f_g_obs, f_g_pri, f_g_dep] + ([f_pos] if cfg.ngph_to_nocs else [])

        if cfg.shape_prior:
            d_nocs, cache["nocs_deform"] = self.nocs_deform.forward([f_pri, *globals_n])
            logits_n, cache["nocs_assign"] = self.nocs_assign.forward([f_obs, f_dep, *globals_n], [f_pri, *globals_n])
            m_nocs = softmax(logits_n)
            deformed_n = prior + d_nocs
            nocs = m_nocs @ deformed_n
            out.deform_nocs, out.assign_nocs, out.assign_nocs_logits = d_nocs, m_nocs, logits_n
            cache["deformed_nocs"] = deformed_n
        else:
            nocs, cache["nocs_direct"] = self.nocs_direct.forward([f_obs, f_dep, *globals_n])

        cache["sizes"] = (n_p, n_m)
        out.depth, out.shape_points, out.camera_points, out.nocs = depth, shape_points, cam, nocs
        return out

    def backward(self, out: Outputs, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Parameter gradients given gradients of the loss w.r.t. the outputs.

        Recognised keys: ``depth``, ``nocs``, ``deform_nocs``, ``assign_nocs``,
        ``assign_nocs_logits``.
        """
        cfg = self.config
        cache = out.cache
        n_p, n_m = cache["sizes"]
        pg: dict[str, np.ndarray] = {}
        B = out.depth.shape[0]

        d_f_obs = np.zeros((B, n_p, cfg.c))
        d_f_pri = np.zeros((B, n_m, cfg.c))
        d_f_dep = np.zeros((B, n_p, cfg.c))
        n_glob = 4 if cfg.ngph_to_nocs else 3
        d_glob_n = [0.0] * n_glob  # f_g_obs, f_g_pri, f_g_dep (, f_pos)

        def add_globals(acc, grads_in):
            for i, gi in enumerate(grads_in):
                acc[i] = acc[i] + gi

        d_nocs = grads.get("nocs", np.zeros_like(out.nocs))
        if cfg.shape_prior:
            m = out.assign_nocs
            d_m = np.einsum("bik,bjk->bij", d_nocs, cache["deformed_nocs"])
            if "assign_nocs" in grads:
                d_m = d_m + grads["assign_nocs"]
            d_d = np.einsum("bij,bik->bjk", m, d_nocs)
            if "deform_nocs" in grads:
                d_d = d_d + grads["deform_nocs"]
            d_logits = softmax_backward(m, d_m)
            if "assign_nocs_logits" in grads:
                d_logits = d_logits + grads["assign_nocs_logits"]
            q_in, k_in, g = self.nocs_assign.backward(cache["nocs_assign"], d_logits)
            pg.update(g)
            d_f_obs += q_in[0]
            d_f_dep += q_in[1]
            add_globals(d_glob_n, q_in[2:])
            d_f_pri += k_in[0]
            add_globals(d_glob_n, k_in[1:])
            ins, g = self.nocs_deform.backward(cache["nocs_deform"], d_d)
            pg.update(g)
            d_f_pri += ins[0]
            add_globals(d_glob_n, ins[1:])
        else:
            ins, g = self.nocs_direct.backward(cache["nocs_direct"], d_nocs)
            pg.update(g)
            d_f_obs += ins[0]
            d_f_dep += ins[1]
            add_globals(d_glob_n, ins[2:])
        d_g_obs, d_g_pri, d_g_dep = d_glob_n[:3]
        d_f_pos = d_glob_n[3] if cfg.ngph_to_nocs else 0.0

        ins, g = self.depth_glob.backward(cache["depth_glob"], self._unpool(d_g_dep, cache, "dep_pool", n_p))
        pg.update(g)
        d_f_dep += ins[0]
        ins, g = self.depth_enc.backward(cache["depth_enc"], d_f_dep)
        pg.update(g)
        d_centred = ins[0]
        d_cam = OFFSET_SCALE * (d_centred - d_centred.mean(axis=1, keepdims=True))
        ray_x, ray_y = cache["rays"]
        d_depth = d_cam[..., 0] * ray_x + d_cam[..., 1] * ray_y + d_cam[..., 2]
        if "depth" in grads:
            d_depth = d_depth + grads["depth"]

        if cfg.decouple:
            d_zt = cache["z_t_scale"] * d_depth.sum(axis=1, keepdims=True)
            ins, g = self.trans_head.backward(cache["trans_head"], d_zt)
            pg.update(g)
            d_f_pos = d_f_pos + ins[0]
        d_shape = np.zeros((B, n_p, 3))
        d_shape[..., 2] = d_depth

        d_glob_d = [d_g_obs, d_g_pri, d_f_pos]
        if cfg.shape_prior:
            m = out.assign_depth
            d_m = np.einsum("bik,bjk->bij", d_shape, cache["deformed_depth"])
            d_d = np.einsum("bij,bik->bjk", m, d_shape)
            q_in, k_in, g = self.depth_assign.backward(cache["depth_assign"], softmax_backward(m, d_m))
            pg.update(g)
            d_f_obs += q_in[0]
            add_globals(d_glob_d, q_in[1:])
            d_f_pri += k_in[0]
            add_globals(d_glob_d, k_in[1:])
            if cfg.decouple:
                d_d = d_d - d_d.mean(axis=1, keepdims=True)
            ins, g = self.depth_deform.backward(cache["depth_deform"], d_d)
            pg.update(g)
            d_f_pri += ins[0]
            add_globals(d_glob_d, ins[1:])
        else:
            ins, g = self.depth_direct.backward(cache["depth_direct"], d_shape)
            pg.update(g)
            d_f_obs += ins[0]
            add_globals(d_glob_d, ins[1:])
        d_g_obs, d_g_pri, d_f_pos = d_glob_d

        ins, g = self.obs_glob.backward(cache["obs_glob"], self._unpool(d_g_obs, cache, "obs_pool", n_p))
        pg.update(g)
        d_f_obs += ins[0]
        ins, g = self.pri_glob.backward(cache["pri_glob"], self._unpool(d_g_pri, cache, "pri_pool", n_m))
        pg.update(g)
        d_f_pri += ins[0]
        pg.update(self.obs_enc.backward(cache["obs_enc"], d_f_obs)[1])
        pg.update(self.pri_enc.backward(cache["pri_enc"], d_f_pri)[1])
        pg.update(self.pos_enc.backward(cache["pos_enc"], d_f_pos)[1])
        return pg


class Discriminator(_Module):
    """Per-point MLP, mean pooling over points, then a scoring MLP to one real number."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        rng = np.random.default_rng([seed, 202])
        self.point = Mlp("disc_point", [3], [config.disc_hidden], config.disc_feature, rng, out_activation="relu")
        self.score = Mlp("disc_score", [config.disc_feature], [config.disc_hidden], 1, rng)
        self.mlps = [self.point, self.score]

    def forward(self, points: np.ndarray):
        f, c1 = self.point.forward([points])
        s, c2 = self.score.forward([mean_pool(f)])
        return s[:, 0], (c1, c2, points.shape[1])

    def backward(self, cache, d_score: np.ndarray):
        c1, c2, n = cache
        ins, g2 = self.score.backward(c2, d_score[:, None])
        ins_p, g1 = self.point.backward(c1, mean_pool_backward(ins[0], n))
        g1.update(g2)
        return ins_p[0], g1


def _chamfer_batch(a: np.ndarray, b: np.ndarray):
    """Chamfer value per item and its gradient w.r.t. ``a``."""
    diff = a[:, :, None, :] - b[:, None, :, :]
    d2 = (diff**2).sum(-1)
    nn_ab = d2.argmin(axis=2)
    nn_ba = d2.argmin(axis=1)
    rows = np.arange(a.shape[0])[:, None]
    val = d2.min(axis=2).mean(axis=1) + d2.min(axis=1).mean(axis=1)
    grad = 2.0 * (a - b[rows, nn_ab]) / a.shape[1]
    back = 2.0 * (a[rows, nn_ba] - b) / b.shape[1]
    for k in range(a.shape[0]):
        np.add.at(grad[k], nn_ba[k], back[k])
    return val, grad


def discriminator_loss_and_grads(disc: Discriminator, real: np.ndarray, fake: np.ndarray):
    """Least-squares discriminator loss (batch mean) and its parameter gradients."""
    s_real, c_real = disc.forward(real)
    s_fake, c_fake = disc.forward(fake)
    B = len(s_real)
    loss = float(((s_real - 1.0) ** 2).mean() + (s_fake**2).mean())
    _, g_real = disc.backward(c_real, 2.0 * (s_real - 1.0) / B)
    _, g_fake = disc.backward(c_fake, 2.0 * s_fake / B)
    return loss, {k: g_real[k] + g_fake[k] for k in g_real}


def loss_and_grads(
    model: SddrModel,
    disc: Discriminator | None,
    batch: Batch,
    weights: LossWeights = LossWeights(),
    with_grads: bool = True,
):
    """Forward pass, the seven loss terms, the weighted total and all gradients.

    Returns ``(terms, total, model_grads, disc_grads, outputs)``. ``disc_grads``
    are gradients of the *total* w.r.t. the discriminator, which only enters
    through the adversarial terms. Pass ``disc=None`` to drop adversarial
    training; its two terms are then zero.
    """
    out = model.forward(batch)
    cfg = model.config
    B, n_p = out.depth.shape
    w = weights
    grads: dict[str, np.ndarray] = {}

    diff = out.depth - batch.gt_depth
    l_z = float(np.abs(diff).mean())
    grads["depth"] = w.z * np.sign(diff) / diff.size

    d_nocs = out.nocs - batch.gt_nocs
    l_corr = float(smooth_l1(d_nocs).mean())
    grads["nocs"] = w.corr * np.clip(d_nocs, -1.0, 1.0) / d_nocs.size

    l_cd = l_entro = l_reg = 0.0
    if cfg.shape_prior:
        deformed = batch.prior + out.deform_nocs
        cd, cd_grad = _chamfer_batch(deformed, batch.model)
        l_cd = float(cd.mean())
        grads["deform_nocs"] = w.cd * cd_grad / B

        m = out.assign_nocs
        top = m.argmax(axis=-1)
        l_entro = float(-np.log(np.take_along_axis(m, top[..., None], axis=-1)).mean())
        onehot = np.zeros_like(m)
        np.put_along_axis(onehot, top[..., None], 1.0, axis=-1)
        grads["assign_nocs_logits"] = w.entro * (m - onehot) / (B * n_p)

        l_reg = float((m**2).mean())
        grads["assign_nocs"] = w.reg * 2.0 * m / m.size

    l_d = l_g = 0.0
    disc_grads = None
    if disc is not None:
        s_real, c_real = disc.forward(batch.gt_nocs)
        s_fake, c_fake = disc.forward(out.nocs)
        l_d = float(((s_real - 1.0) ** 2).mean() + (s_fake**2).mean())
        l_g = float(((s_fake - 1.0) ** 2).mean())
        if with_grads:
            d_fake = (w.d * 2.0 * s_fake + w.g * 2.0 * (s_fake - 1.0)) / B
            d_points, g_fake = disc.backward(c_fake, d_fake)
            _, g_real = disc.backward(c_real, w.d * 2.0 * (s_real - 1.0) / B)
            disc_grads = {k: g_fake[k] + g_real[k] for k in g_fake}
            grads["nocs"] = grads["nocs"] + d_points

    terms = LossTerms(l_z, l_d, l_g, l_corr, l_cd, l_entro, l_reg)
    total = float(terms.as_array() @ w.as_array())
    model_grads = model.backward(out, grads) if with_grads else None
    return terms, total, model_grads, disc_grads, out
