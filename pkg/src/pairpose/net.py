"""Network, losses, training, and the end-to-end prediction pipeline.

All "Conv1D" style layers are shared per-point dense layers (kernel size 1),
so the whole model is expressible over 2-D tensors.  The pseudo-siamese
feature network (PSN) runs the same weights over both clouds and swaps in
an "exterior" global feature pooled from the opposite cloud; its outputs
form the attention map.  Two separate extractors feed the bidirectional
correspondence heads and the direct pose head.

Scene clouds are centered (centroid subtracted) before entering the
network and all scene-frame outputs carry the centroid back out, so
translation never has to be memorized by the regressors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteInput, NonFiniteLoss, SizeMismatch
from .geom import OrientedPointCloud, Pose, pose_apply, pose_invert
from .ppf import PpfGammas, attention_target
from .solver import CorrespondenceSet, PoseSet, average_poses, poses_from_matches
from .synth import Dataset


@dataclass(frozen=True)
class NetConfig:
    """Architecture, mechanism flags, loss weights, and optimizer settings."""

    # pseudo-siamese attention network
    psn_trunk: tuple = (64, 128, 256, 512, 1024)
    psn_exterior_width: int = 24
    psn_out_width: int = 512
    # branch feature extractors
    feat_widths: tuple = (64, 128, 256)
    feat_global_width: int = 256
    scene_scalar_channel: str = "support"   # "none" | "support" (p . n)
    # heads
    decode_width: int = 256
    head_hidden: tuple = (256, 128)
    # mechanism flags (the ablation axes)
    attention_source: str = "psn"           # "psn" | "branch"
    attention_for_match: bool = True
    attention_for_direct: bool = True
    ppf_supervision: bool = True
    # gain on the attention rows fed to the heads; row-stochastic entries are
    # O(1/N), so None scales by the point count to condition them to O(1)
    attention_input_gain: float | None = None
    # loss weights
    phi: tuple = (1.0, 1.0, 1.0, 0.01)
    epsilon: float = 0.1
    gammas: tuple = (100.0, 50.0, 50.0)
    # optimizer
    epochs: int = 50
    lr: float = 1e-3
    lr_decay: float = 1.0           # multiplicative, per epoch
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # pose fusion at prediction time
    num_pairs: int = 100

    def __post_init__(self):
        if len(self.psn_trunk) < 2:
            raise ValueError("psn_trunk needs at least 2 layers")
        if self.psn_out_width <= 0 or self.psn_exterior_width <= 0:
            raise ValueError("psn widths must be positive")
        if self.attention_source not in ("psn", "branch"):
            raise ValueError(f"bad attention_source {self.attention_source!r}")
        if self.scene_scalar_channel not in ("none", "support"):
            raise ValueError(f"bad scene_scalar_channel "
                             f"{self.scene_scalar_channel!r}")
        if len(self.phi) != 4 or any(p < 0 for p in self.phi):
            raise ValueError("phi must be 4 non-negative weights")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def psn_fused_width(self) -> int:
        return self.psn_trunk[-1] + self.psn_exterior_width

    @property
    def feat_out_width(self) -> int:
        return self.feat_widths[-1] + self.feat_global_width

    @property
    def uses_attention_map(self) -> bool:
        return (self.ppf_supervision or self.attention_for_match
                or self.attention_for_direct)

    @property
    def uses_psn(self) -> bool:
        return self.uses_attention_map and self.attention_source == "psn"


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _psn_layer_dims(cfg: NetConfig):
    dims = []
    in_w = 6
    for i, w in enumerate(cfg.psn_trunk):
        if i == 2:
            in_w = cfg.psn_trunk[0] + cfg.psn_trunk[1]  # local fusion concat
        dims.append((in_w, w))
        in_w = w
    return dims


def _feat_layer_dims(cfg: NetConfig, scene_side: bool):
    in_w = 6 + (1 if scene_side and cfg.scene_scalar_channel == "support" else 0)
    dims = []
    for w in cfg.feat_widths:
        dims.append((in_w, w))
        in_w = w
    return dims


def _regressor_in_width(cfg: NetConfig, n_points: int, with_attention: bool,
                        inter_branch: bool) -> int:
    width = cfg.decode_width + cfg.feat_out_width  # decoded + short circuit
    if with_attention:
        width += n_points
    if inter_branch:
        width += cfg.decode_width
    return width


def expected_param_shapes(cfg: NetConfig, n_points: int) -> dict:
    """Every learnable tensor's shape, keyed by name; init and checkpoint
    loading both derive from this."""
    shapes = {}

    def dense(name, i, o):
        shapes[f"{name}.w"] = (i, o)
        shapes[f"{name}.b"] = (1, o)

    if cfg.uses_psn:
        for i, (in_w, out_w) in enumerate(_psn_layer_dims(cfg)):
            dense(f"psn.t{i}", in_w, out_w)
        dense("psn.ext", cfg.psn_trunk[-1], cfg.psn_exterior_width)
        dense("psn.out", cfg.psn_fused_width, cfg.psn_out_width)

    for prefix, scene_side in (("feat_s", True), ("feat_m", False)):
        for i, (in_w, out_w) in enumerate(_feat_layer_dims(cfg, scene_side)):
            dense(f"{prefix}.l{i}", in_w, out_w)
        dense(f"{prefix}.glob", cfg.feat_widths[-1], cfg.feat_global_width)

    for prefix in ("corr_s", "corr_m"):
        dense(f"{prefix}.dec", cfg.feat_out_width, cfg.decode_width)
        in_w = _regressor_in_width(cfg, n_points, cfg.attention_for_match, True)
        for i, h in enumerate(cfg.head_hidden):
            dense(f"{prefix}.h{i}", in_w, h)
            in_w = h
        dense(f"{prefix}.pos", in_w, 3)
        dense(f"{prefix}.nrm", in_w, 3)

    dense("direct.dec", cfg.feat_out_width, cfg.decode_width)
    in_w = _regressor_in_width(cfg, n_points, cfg.attention_for_direct, False)
    for i, h in enumerate(cfg.head_hidden):
        dense(f"direct.h{i}", in_w, h)
        in_w = h
    dense("direct.quat", in_w, 4)
    dense("direct.trans", in_w, 3)
    return shapes


def init_params(cfg: NetConfig, n_points: int, rng: np.random.Generator) -> dict:
    """Glorot-uniform weights, zero biases; the quaternion head bias starts
    at the identity rotation so early pose candidates are sane."""
    params = {}
    for name, shape in expected_param_shapes(cfg, n_points).items():
        if name.endswith(".b"):
            v = np.zeros(shape)
            if name == "direct.quat.b":
                v[0, 0] = 1.0
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            v = rng.uniform(-limit, limit, size=shape)
        params[name] = ad.Tensor(v, requires_grad=True)
    return params


def detach_params(params: dict) -> dict:
    return {k: p.detach() for k, p in params.items()}


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _dense(x, params, name):
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _psn_trunk_forward(x, params, cfg):
    h0 = ad.relu(_dense(x, params, "psn.t0"))
    h1 = ad.relu(_dense(h0, params, "psn.t1"))
    h = ad.concat_cols(h0, h1) if len(cfg.psn_trunk) > 2 else h1
    for i in range(2, len(cfg.psn_trunk)):
        h = ad.relu(_dense(h, params, f"psn.t{i}"))
    return h


def psn_forward(scene_x, model_x, params, cfg: NetConfig):
    """Weight-shared per-point features for both clouds; each side's fused
    feature concatenates an exterior global feature pooled from the other
    cloud, and output rows are L2-normalized."""
    if scene_x.shape != model_x.shape:
        raise SizeMismatch(f"psn inputs {scene_x.shape} vs {model_x.shape}")
    n = scene_x.shape[0]
    hs = _psn_trunk_forward(scene_x, params, cfg)
    hm = _psn_trunk_forward(model_x, params, cfg)
    ext_for_scene = ad.relu(_dense(ad.mean_pool_rows(hm), params, "psn.ext"))
    ext_for_model = ad.relu(_dense(ad.mean_pool_rows(hs), params, "psn.ext"))
    f_sa = ad.row_l2_normalize(_dense(
        ad.concat_cols(hs, ad.repeat_rows(ext_for_scene, n)), params, "psn.out"))
    f_ma = ad.row_l2_normalize(_dense(
        ad.concat_cols(hm, ad.repeat_rows(ext_for_model, n)), params, "psn.out"))
    return f_sa, f_ma


def attention_forward(f_sa, f_ma):
    """Row-stochastic similarity: softmax over model points per scene row."""
    if f_sa.shape[1] != f_ma.shape[1]:
        raise SizeMismatch(f"feature widths differ: {f_sa.shape} vs {f_ma.shape}")
    return ad.row_softmax(ad.matmul(f_sa, ad.transpose(f_ma)))


def attention_loss(m, w):
    """Mean squared deviation of the attention map from the pair-weight target."""
    return ad.mse(m, w)


def _feat_side(x, params, prefix, cfg):
    h = x
    for i in range(len(cfg.feat_widths)):
        h = ad.relu(_dense(h, params, f"{prefix}.l{i}"))
    g = ad.relu(_dense(ad.mean_pool_rows(h), params, f"{prefix}.glob"))
    return ad.concat_cols(h, ad.repeat_rows(g, x.shape[0]))


def feature_forward(scene_x, model_x, params, cfg: NetConfig):
    """Separate per-branch extractors (the distribution divergence the PSN
    exists to avoid is fine here; these feed the regressors only)."""
    if scene_x.shape[0] != model_x.shape[0]:
        raise SizeMismatch(f"cloud sizes differ: {scene_x.shape[0]} vs "
                           f"{model_x.shape[0]}")
    return (_feat_side(scene_x, params, "feat_s", cfg),
            _feat_side(model_x, params, "feat_m", cfg))


def _regressor_trunk(f, decoded, attn_rows, exterior, params, prefix,
                     cfg: NetConfig):
    """Shared head wiring: [decoded | attention rows | pooled opposite decode
    | raw feature short circuit] through the hidden chain."""
    n = f.shape[0]
    parts = [decoded]
    if attn_rows is not None:
        if attn_rows.shape[0] != n:
            raise SizeMismatch(f"attention rows {attn_rows.shape} vs {n} points")
        parts.append(attn_rows)
    if exterior is not None:
        parts.append(ad.repeat_rows(exterior, n))
    parts.append(f)
    h = ad.concat_cols(*parts)
    for i in range(len(cfg.head_hidden)):
        h = ad.relu(_dense(h, params, f"{prefix}.h{i}"))
    return h


def correspondence_forward(f, attn_rows, exterior, params, prefix,
                           cfg: NetConfig):
    """One branch head: per-point matched position plus a renormalized
    matched normal.  Returns (positions, normals, decoded) tensors."""
    decoded = ad.relu(_dense(f, params, f"{prefix}.dec"))
    h = _regressor_trunk(f, decoded, attn_rows, exterior, params, prefix, cfg)
    pos = _dense(h, params, f"{prefix}.pos")
    nrm = ad.row_l2_normalize(_dense(h, params, f"{prefix}.nrm"))
    return pos, nrm, decoded


def _head_attention(attn, cfg: NetConfig):
    """Condition attention rows for head input: remove the uniform baseline
    (1/N, which carries no information) and rescale the deviations to O(1).
    An uninformative map then contributes ~zero instead of a large constant
    block, so heads only start consuming attention once it sharpens."""
    if attn is None:
        return None
    n = attn.shape[1]
    gain = cfg.attention_input_gain
    if gain is None:
        gain = float(n)
    centered = ad.add(attn, ad.Tensor(np.full(attn.shape, -1.0 / n)))
    return ad.scalar_scale(centered, gain) if gain != 1.0 else centered


def bidirectional_forward(f_s, f_m, attn, params, cfg: NetConfig):
    """Both correspondence heads with inter-branch pooled-decode exchange."""
    dec_s = ad.relu(_dense(f_s, params, "corr_s.dec"))
    dec_m = ad.relu(_dense(f_m, params, "corr_m.dec"))
    attn_s = _head_attention(attn, cfg) if cfg.attention_for_match else None
    attn_m = (_head_attention(ad.transpose(attn), cfg)
              if cfg.attention_for_match else None)
    h_s = _regressor_trunk(f_s, dec_s, attn_s, ad.mean_pool_rows(dec_m),
                           params, "corr_s", cfg)
    h_m = _regressor_trunk(f_m, dec_m, attn_m, ad.mean_pool_rows(dec_s),
                           params, "corr_m", cfg)
    pos_s = _dense(h_s, params, "corr_s.pos")
    nrm_s = ad.row_l2_normalize(_dense(h_s, params, "corr_s.nrm"))
    pos_m = _dense(h_m, params, "corr_m.pos")
    nrm_m = ad.row_l2_normalize(_dense(h_m, params, "corr_m.nrm"))
    return (pos_s, nrm_s), (pos_m, nrm_m)


def direct_pose_forward(f_s, attn, params, cfg: NetConfig):
    """Per-point pose candidates: unit quaternion rows + translation rows."""
    if cfg.attention_for_direct and attn is None:
        raise ValueError("config wants attention for the direct branch but "
                         "no attention map was computed")
    decoded = ad.relu(_dense(f_s, params, "direct.dec"))
    attn_rows = _head_attention(attn, cfg) if cfg.attention_for_direct else None
    h = _regressor_trunk(f_s, decoded, attn_rows, None, params, "direct", cfg)
    quats = ad.row_l2_normalize(_dense(h, params, "direct.quat"))
    trans = _dense(h, params, "direct.trans")
    return quats, trans


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def correspondence_loss(pred_pos, pred_nrm, gt_pos, gt_nrm, epsilon: float):
    """(1/N) sum_i (|x_i - x̂_i|_1 + eps |n_i - n̂_i|_1).

    The elementwise-mean l1 is rescaled by 3 to make it a mean of row sums.
    """
    pos_term = ad.scalar_scale(ad.l1(pred_pos, gt_pos), 3.0)
    nrm_term = ad.scalar_scale(ad.l1(pred_nrm, gt_nrm), 3.0 * epsilon)
    return ad.add(pos_term, nrm_term)


def add_loss(quats, trans, model_points, target_points):
    """Mean ADD over all pose candidates (rows of quats/trans)."""
    return ad.mean_pose_point_distance(quats, trans, model_points, target_points)


def adds_loss(quats, trans, model_points, target_points):
    """Mean ADD-S; the nearest-point index is recomputed per call, detached."""
    sel = ad.nearest_point_selection(quats.values, trans.values,
                                     model_points, target_points)
    return ad.mean_pose_point_distance(quats, trans, model_points,
                                       target_points, sel=sel)


def total_loss(l_d, l_s, l_m, l_attention, phi):
    """phi1 * mean(L_d) + phi2 L_s + phi3 L_m + phi4 L_attention.

    Any component may be None (ablated); it then contributes nothing.
    """
    terms = []
    for weight, term in zip(phi, (l_d, l_s, l_m, l_attention)):
        if term is not None and weight != 0.0:
            terms.append(ad.scalar_scale(term, weight))
    if not terms:
        return ad.Tensor([[0.0]])
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


# ---------------------------------------------------------------------------
# scene preparation and the full forward pass
# ---------------------------------------------------------------------------

def _scene_inputs(scene: OrientedPointCloud, cfg: NetConfig):
    center = scene.positions.mean(axis=0)
    pos = scene.positions - center
    cols = [pos, scene.normals]
    if cfg.scene_scalar_channel == "support":
        cols.append(np.sum(pos * scene.normals, axis=1, keepdims=True))
    return center, ad.Tensor(np.hstack(cols)), ad.Tensor(np.hstack([pos, scene.normals]))


def _model_inputs(model: OrientedPointCloud):
    x = np.hstack([model.positions, model.normals])
    return ad.Tensor(x), ad.Tensor(x)


@dataclass
class PreparedScene:
    """Constant tensors for one training scene."""

    xs_feat: ad.Tensor      # scene input for the branch extractor
    xs_psn: ad.Tensor       # scene input for the PSN (always 6 columns)
    xm_feat: ad.Tensor
    xm_psn: ad.Tensor
    center: np.ndarray
    gt: Pose
    scene_target_pos: ad.Tensor   # canonical coords of each scene point
    scene_target_nrm: ad.Tensor
    model_target_pos: ad.Tensor   # centered scene coords of each model point
    model_target_nrm: ad.Tensor
    pose_targets: np.ndarray      # == model_target_pos values (ADD targets)
    w_target: ad.Tensor | None


def prepare_scene(scene: OrientedPointCloud, model: OrientedPointCloud,
                  gt: Pose, cfg: NetConfig) -> PreparedScene:
    if len(scene) != len(model):
        raise SizeMismatch(f"scene {len(scene)} vs model {len(model)} points")
    center, xs_feat, xs_psn = _scene_inputs(scene, cfg)
    xm_feat, xm_psn = _model_inputs(model)
    canonical = pose_apply(pose_invert(gt), scene, frame="canonical")
    posed_model = pose_apply(gt, model, frame="scene")
    pose_targets = posed_model.positions - center
    w = None
    if cfg.uses_attention_map:
        gammas = PpfGammas(*cfg.gammas)
        w = ad.Tensor(attention_target(scene, model, gt, gammas).weights)
    return PreparedScene(
        xs_feat=xs_feat, xs_psn=xs_psn, xm_feat=xm_feat, xm_psn=xm_psn,
        center=center, gt=gt,
        scene_target_pos=ad.Tensor(canonical.positions),
        scene_target_nrm=ad.Tensor(canonical.normals),
        model_target_pos=ad.Tensor(pose_targets),
        model_target_nrm=ad.Tensor(posed_model.normals),
        pose_targets=pose_targets,
        w_target=w,
    )


def forward_all(prep: PreparedScene, params: dict, cfg: NetConfig,
                frozen_head_attention: np.ndarray | None = None):
    """Run every active branch; returns a dict of output tensors.

    ``frozen_head_attention`` substitutes a constant array for the heads'
    attention input (used by finite-difference checks, where the detached
    channel must not vary with the parameters being perturbed).
    """
    out = {}
    attn = head_attn = None
    f_s, f_m = feature_forward(prep.xs_feat, prep.xm_feat, params, cfg)
    if cfg.uses_attention_map:
        if cfg.attention_source == "psn":
            f_sa, f_ma = psn_forward(prep.xs_psn, prep.xm_psn, params, cfg)
        else:
            f_sa = ad.row_l2_normalize(f_s)
            f_ma = ad.row_l2_normalize(f_m)
        attn = attention_forward(f_sa, f_ma)
        # heads consume the map as a detached input: task gradients would
        # otherwise repurpose the similarity network as free features and
        # destroy the matching structure the pair-weight supervision builds
        head_attn = (ad.Tensor(frozen_head_attention)
                     if frozen_head_attention is not None else attn.detach())
        out["f_sa"], out["f_ma"] = f_sa, f_ma
    (pos_s, nrm_s), (pos_m, nrm_m) = bidirectional_forward(f_s, f_m, head_attn,
                                                           params, cfg)
    quats, trans = direct_pose_forward(f_s, head_attn, params, cfg)
    out.update(attention=attn, f_s=f_s, f_m=f_m,
               scene_pos=pos_s, scene_nrm=nrm_s,
               model_pos=pos_m, model_nrm=nrm_m,
               quats=quats, trans=trans)
    return out


def scene_losses(prep: PreparedScene, outputs: dict, cfg: NetConfig,
                 symmetric: bool, model_points: np.ndarray):
    l_s = correspondence_loss(outputs["scene_pos"], outputs["scene_nrm"],
                              prep.scene_target_pos, prep.scene_target_nrm,
                              cfg.epsilon)
    l_m = correspondence_loss(outputs["model_pos"], outputs["model_nrm"],
                              prep.model_target_pos, prep.model_target_nrm,
                              cfg.epsilon)
    pose_fn = adds_loss if symmetric else add_loss
    l_d = pose_fn(outputs["quats"], outputs["trans"], model_points,
                  prep.pose_targets)
    l_att = None
    if cfg.ppf_supervision:
        l_att = attention_loss(outputs["attention"], prep.w_target)
    return l_d, l_s, l_m, l_att


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(dataset: Dataset, cfg: NetConfig, seed: int = 0):
    """Train on the dataset's training split; deterministic given the seed.

    Returns (params, log) where log is one dict per epoch with the mean of
    each loss term.  Raises NonFiniteLoss with the failing step index if a
    step produces NaN/inf anywhere.
    """
    rng = np.random.default_rng(seed)
    n_points = len(dataset.model)
    params = init_params(cfg, n_points, rng)
    state = ad.init_adam_state(params)
    model_points = dataset.model.positions

    prepared = [prepare_scene(rec.scene, dataset.model, rec.gt, cfg)
                for rec in dataset.train_records]
    if not prepared:
        raise ValueError("dataset has no training scenes")

    log = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** epoch
        order = rng.permutation(len(prepared))
        sums = {"L_d": 0.0, "L_s": 0.0, "L_m": 0.0, "L_attention": 0.0,
                "total": 0.0}
        for idx in order:
            prep = prepared[idx]
            ad.zero_grad(params)
            try:
                outputs = forward_all(prep, params, cfg)
                l_d, l_s, l_m, l_att = scene_losses(
                    prep, outputs, cfg, dataset.symmetric, model_points)
                loss = total_loss(l_d, l_s, l_m, l_att, cfg.phi)
                ad.backward(loss)
            except NonFiniteInput as exc:
                raise NonFiniteLoss(f"non-finite value at step {step}: {exc}")
            if not np.isfinite(loss.item()):
                raise NonFiniteLoss(f"loss diverged at step {step}")
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            ad.adam_step(params, grads, state, lr=lr, beta1=cfg.beta1,
                         beta2=cfg.beta2, eps=cfg.adam_eps)
            sums["L_d"] += l_d.item()
            sums["L_s"] += l_s.item()
            sums["L_m"] += l_m.item()
            sums["L_attention"] += l_att.item() if l_att is not None else 0.0
            sums["total"] += loss.item()
            step += 1
        n = len(prepared)
        log.append({"epoch": epoch, **{k: v / n for k, v in sums.items()}})
    return params, log


# ---------------------------------------------------------------------------
# prediction and evaluation
# ---------------------------------------------------------------------------

@dataclass
class Prediction:
    final_pose: Pose
    pose_set: PoseSet
    corr_scene: CorrespondenceSet
    corr_model: CorrespondenceSet
    attention: np.ndarray | None


def predict(params: dict, cfg: NetConfig, scene: OrientedPointCloud,
            model: OrientedPointCloud, seed: int = 0) -> Prediction:
    """Full pipeline: forward pass, both pair-alignment pose sets, the direct
    candidates, and their average."""
    frozen = detach_params(params)
    prep = prepare_scene(scene, model, Pose.identity(), cfg)
    outputs = forward_all(prep, frozen, cfg)

    scene_match_pos = outputs["scene_pos"].values
    scene_match_nrm = outputs["scene_nrm"].values
    model_match_pos = outputs["model_pos"].values + prep.center
    model_match_nrm = outputs["model_nrm"].values

    corr_scene = CorrespondenceSet(scene.positions, scene.normals,
                                   scene_match_pos, scene_match_nrm,
                                   "scene_to_model")
    corr_model = CorrespondenceSet(model.positions, model.normals,
                                   model_match_pos, model_match_nrm,
                                   "model_to_scene")

    seeds = np.random.SeedSequence((seed, 0)).generate_state(2)
    t_s = poses_from_matches(corr_scene, cfg.num_pairs, int(seeds[0]))
    t_m = poses_from_matches(corr_model, cfg.num_pairs, int(seeds[1]))

    quats = outputs["quats"].values
    trans = outputs["trans"].values + prep.center
    t_d = PoseSet(tuple(Pose(q, t) for q, t in zip(quats, trans)),
                  ("direct",) * quats.shape[0])

    pose_set = PoseSet.union(t_d, t_s, t_m)
    attention = (outputs["attention"].values.copy()
                 if outputs["attention"] is not None else None)
    return Prediction(final_pose=average_poses(pose_set), pose_set=pose_set,
                      corr_scene=corr_scene, corr_model=corr_model,
                      attention=attention)


def evaluate_dataset(params: dict, cfg: NetConfig, dataset: Dataset,
                     which: str = "test", seed: int = 0):
    """Evaluate the full pipeline on a dataset split.

    Returns (records, diagnostics); diagnostics carries the mean test
    correspondence L1 (averaged over both directions) used by the ablation
    comparisons.
    """
    from .metrics import EvalRecord, add_metric, adds_metric, model_diameter

    recs = {"train": dataset.train_records, "test": dataset.test_records,
            "all": list(dataset.records)}[which]
    if not recs:
        raise ValueError(f"dataset has no {which!r} scenes")
    diameter = model_diameter(dataset.model)
    frozen = detach_params(params)
    records, corr_l1s = [], []
    for i, rec in enumerate(recs):
        pred = predict(frozen, cfg, rec.scene, dataset.model,
                       seed=int(np.random.SeedSequence((seed, i)).generate_state(1)[0]))
        records.append(EvalRecord(
            scene_id=f"{which}_{i}",
            add_error=add_metric(pred.final_pose, rec.gt, dataset.model),
            adds_error=adds_metric(pred.final_pose, rec.gt, dataset.model),
            diameter=diameter,
            symmetric=dataset.symmetric,
        ))
        prep = prepare_scene(rec.scene, dataset.model, rec.gt, cfg)
        outputs = forward_all(prep, frozen, cfg)
        l_d, l_s, l_m, _ = scene_losses(prep, outputs, cfg, dataset.symmetric,
                                        dataset.model.positions)
        corr_l1s.append(0.5 * (l_s.item() + l_m.item()))
    diagnostics = {"corr_l1": float(np.mean(corr_l1s))}
    return records, diagnostics


def attention_match_rate(params: dict, cfg: NetConfig,
                         model: OrientedPointCloud, poses) -> float:
    """Fraction of rows whose attention argmax is the true match, probed on
    noiseless scenes built by posing the model exactly."""
    frozen = detach_params(params)
    rates = []
    for g in poses:
        scene = pose_apply(g, model, frame="scene")
        prep = prepare_scene(scene, model, g, cfg)
        outputs = forward_all(prep, frozen, cfg)
        m = outputs["attention"]
        if m is None:
            raise ValueError("config computes no attention map")
        rates.append(float(np.mean(np.argmax(m.values, axis=1)
                                   == np.arange(len(model)))))
    return float(np.mean(rates))
