"""Implicit projection head.

A hypernetwork maps an instance feature (size, relative orientation, class)
to the weights of a tiny MLP, which in turn maps a positionally encoded
(w2d, h2d) box descriptor to metric depth. Everything is float64 numpy with
hand-written backprop.

Parameter vector layout of the target MLP (``theta``), in order:

1. layer-1 weights, shape (4L, H), row-major (input index major)
2. layer-1 biases, shape (H,)
3. layer-2 weights, shape (H,)
4. layer-2 bias, shape (1,)

Depth is ``d_ref * exp(raw)`` where ``raw`` is the MLP output.
"""
from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from lr3d.exceptions import (
    ConfigInvalid,
    DimMismatch,
    DivergedLoss,
    EmptyTrainingSet,
    NonPositiveDepth,
    SharedModeMisuse,
)
from lr3d.geometry import Box2D, CameraIntrinsics, ObjectState, box_corners, project_boxes

logger = logging.getLogger(__name__)

MODEL_FORMAT = "lr3d-iphead"
MODEL_VERSION = 1

SIZE_SLICE = slice(0, 3)
SIN_O, COS_O = 3, 4
N_GEOM_FEATURES = 5


@dataclass(frozen=True)
class PositionalEncodingConfig:
    num_freqs: int = 8
    input_scale: float = 1000.0

    @property
    def out_dim(self) -> int:
        return 4 * self.num_freqs


@dataclass(frozen=True)
class TargetNetShape:
    in_dim: int = 32
    hidden: int = 16

    @property
    def n_params(self) -> int:
        return self.in_dim * self.hidden + self.hidden + self.hidden + 1

    def split(self, theta: np.ndarray):
        """Split (..., P) parameter arrays into (W1, b1, w2, b2) views."""
        i, h = self.in_dim, self.hidden
        lead = theta.shape[:-1]
        W1 = theta[..., : i * h].reshape(*lead, i, h)
        b1 = theta[..., i * h : i * h + h]
        w2 = theta[..., i * h + h : i * h + 2 * h]
        b2 = theta[..., -1]
        return W1, b1, w2, b2


@dataclass(frozen=True)
class InstanceFeature:
    vec: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.vec)

    @property
    def size(self) -> tuple[float, float, float]:
        return tuple(float(s) for s in self.vec[SIZE_SLICE])

    @property
    def orientation(self) -> float:
        return math.atan2(float(self.vec[SIN_O]), float(self.vec[COS_O]))


def make_feature(size, o: float, class_id: int, n_classes: int) -> InstanceFeature:
    """Feature layout: [l, w, h, sin(o), cos(o), one-hot class]. Never reads the center."""
    onehot = np.zeros(n_classes)
    onehot[int(class_id)] = 1.0
    vec = np.concatenate([np.asarray(size, dtype=float), [math.sin(o), math.cos(o)], onehot])
    return InstanceFeature(vec)


def encode(wh: np.ndarray, cfg: PositionalEncodingConfig) -> np.ndarray:
    """Vectorised positional encoding of (..., 2) box descriptors into (..., 4L).

    Order: for x in (w2d, h2d), for k in 0..L-1: sin(2^k x), cos(2^k x).
    """
    x = np.asarray(wh, dtype=float) / cfg.input_scale
    freqs = 2.0 ** np.arange(cfg.num_freqs)
    arg = x[..., :, None] * freqs  # (..., 2, L)
    out = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., 2, L, 2)
    return out.reshape(*x.shape[:-1], cfg.out_dim)


def positional_encode(b: Box2D, cfg: PositionalEncodingConfig) -> np.ndarray:
    return encode(np.array([b.w2d, b.h2d]), cfg)


class IPHeadModel:
    """Parameters and fixed configuration of an IP-Head.

    ``params`` holds the hypernetwork (``W1``, ``b1``, ``W2``, ``b2``) and
    ``shared_theta``; in shared mode only ``shared_theta`` is trained.
    Features are standardised with ``feat_mean``/``feat_scale`` before the
    hypernetwork sees them.
    """

    PARAM_NAMES = ("W1", "b1", "W2", "b2", "shared_theta")

    def __init__(self, feature_dim, pe_config=None, hidden=16, hyper_hidden=64,
                 weight_mode="dynamic", d_ref=1.0, rng_seed=0):
        if weight_mode not in ("dynamic", "shared"):
            raise ValueError(f"weight_mode must be 'dynamic' or 'shared', got {weight_mode!r}")
        self.feature_dim = int(feature_dim)
        self.pe_config = pe_config or PositionalEncodingConfig()
        self.target_shape = TargetNetShape(self.pe_config.out_dim, int(hidden))
        self.hyper_hidden = int(hyper_hidden)
        self.weight_mode = weight_mode
        self.d_ref = float(d_ref)
        self.rng_seed = int(rng_seed)
        self.feat_mean = np.zeros(self.feature_dim)
        self.feat_scale = np.ones(self.feature_dim)

        rng = np.random.default_rng(self.rng_seed)
        P, G, D = self.target_shape.n_params, self.hyper_hidden, self.feature_dim
        base = self.initial_theta(rng)
        # Zero hypernet output weights; its bias carries a base theta whose
        # last layer is zero, so every instance starts at exactly d_ref while
        # the target net's hidden layer is not stuck at the all-zero saddle.
        self.params = {
            "W1": rng.normal(0.0, 1.0 / math.sqrt(D), size=(D, G)),
            "b1": np.zeros(G),
            "W2": np.zeros((G, P)),
            "b2": base.copy(),
            "shared_theta": base.copy(),
        }

    def initial_theta(self, rng) -> np.ndarray:
        shape = self.target_shape
        theta = np.zeros(shape.n_params)
        W1, b1, _, _ = shape.split(theta)
        W1[...] = rng.normal(0.0, 1.0 / math.sqrt(shape.in_dim), size=W1.shape)
        b1[...] = rng.normal(0.0, 0.1, size=b1.shape)
        return theta

    @property
    def n_params(self) -> int:
        return self.target_shape.n_params

    def copy(self) -> "IPHeadModel":
        return IPHeadModel.from_bytes(self.to_bytes())

    # serialization -------------------------------------------------------

    def meta(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "byte_order": "little",
            "dtype": "float64",
            "feature_dim": self.feature_dim,
            "pe_config": asdict(self.pe_config),
            "target_shape": asdict(self.target_shape),
            "hyper_hidden": self.hyper_hidden,
            "weight_mode": self.weight_mode,
            "d_ref": self.d_ref,
            "rng_seed": self.rng_seed,
        }

    def to_bytes(self) -> bytes:
        arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in self.params.items()}
        arrays["feat_mean"] = np.ascontiguousarray(self.feat_mean, dtype="<f8")
        arrays["feat_scale"] = np.ascontiguousarray(self.feat_scale, dtype="<f8")
        arrays["meta"] = np.frombuffer(json.dumps(self.meta(), sort_keys=True).encode(), dtype=np.uint8)
        # hand-built npz: fixed entry order and timestamps make the bytes reproducible
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w") as fh:
                    np.lib.format.write_array(fh, arrays[name], allow_pickle=False)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "IPHeadModel":
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format") != MODEL_FORMAT:
                raise ValueError("not an IP-Head model file")
            if meta["version"] > MODEL_VERSION:
                raise ValueError(f"unsupported model version {meta['version']}")
            model = cls(
                meta["feature_dim"],
                PositionalEncodingConfig(**meta["pe_config"]),
                hidden=meta["target_shape"]["hidden"],
                hyper_hidden=meta["hyper_hidden"],
                weight_mode=meta["weight_mode"],
                d_ref=meta["d_ref"],
                rng_seed=meta["rng_seed"],
            )
            model.params = {k: z[k].astype(np.float64) for k in cls.PARAM_NAMES}
            model.feat_mean = z["feat_mean"].astype(np.float64)
            model.feat_scale = z["feat_scale"].astype(np.float64)
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "IPHeadModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# forward / backward ------------------------------------------------------


def _check_features(model: IPHeadModel, F: np.ndarray) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[-1] != model.feature_dim:
        raise DimMismatch(f"feature dim {F.shape[-1]} != model feature dim {model.feature_dim}")
    return F


def _hyper_forward(model: IPHeadModel, F: np.ndarray):
    p = model.params
    Fs = (F - model.feat_mean) / model.feat_scale
    h = np.tanh(Fs @ p["W1"] + p["b1"])
    return Fs, h, h @ p["W2"] + p["b2"]


def generate_weights(model: IPHeadModel, F) -> np.ndarray:
    """Per-instance target-net weights, shape (P,) for one feature or (N, P) for a batch."""
    if model.weight_mode == "shared":
        raise SharedModeMisuse("shared-mode models have no weight generator; use shared_theta")
    vec = F.vec if isinstance(F, InstanceFeature) else F
    single = np.ndim(vec) == 1
    theta = _hyper_forward(model, _check_features(model, vec))[2]
    return theta[0] if single else theta


def _target_forward(theta, pe, shape: TargetNetShape):
    """theta (N, P), pe (N, S, I) -> raw (N, S) plus hidden activations."""
    W1, b1, w2, b2 = shape.split(theta)
    g = np.tanh(pe @ W1 + b1[:, None, :])
    raw = (g @ w2[:, :, None])[..., 0] + b2[:, None]
    return raw, g


def target_forward(theta, pe, shape: TargetNetShape, d_ref: float = 1.0) -> float:
    theta = np.asarray(theta, dtype=float)
    pe = np.asarray(pe, dtype=float)
    if theta.shape != (shape.n_params,) or pe.shape != (shape.in_dim,):
        raise DimMismatch(f"expected theta ({shape.n_params},) and pe ({shape.in_dim},), "
                          f"got {theta.shape} and {pe.shape}")
    raw, _ = _target_forward(theta[None], pe[None, None], shape)
    return float(d_ref * np.exp(raw[0, 0]))


def _thetas(model: IPHeadModel, F: np.ndarray):
    if model.weight_mode == "shared":
        return None, None, np.broadcast_to(model.params["shared_theta"], (len(F), model.n_params))
    return _hyper_forward(model, F)


def predict_depths(model: IPHeadModel, F, wh) -> np.ndarray:
    """Batched depth prediction. ``F`` is (N, D), ``wh`` is (N, 2) or (N, S, 2)."""
    F = _check_features(model, F)
    wh = np.asarray(wh, dtype=float)
    squeeze = wh.ndim == 2
    if squeeze:
        wh = wh[:, None, :]
    _, _, theta = _thetas(model, F)
    raw, _ = _target_forward(theta, encode(wh, model.pe_config), model.target_shape)
    d = model.d_ref * np.exp(raw)
    return d[:, 0] if squeeze else d


def predict_depth(model: IPHeadModel, F: InstanceFeature, b: Box2D) -> float:
    return float(predict_depths(model, F.vec[None], [[b.w2d, b.h2d]])[0])


def _smooth_l1(r, beta):
    a = np.abs(r)
    quad = a < beta
    with np.errstate(over="ignore"):  # the unused quadratic branch may overflow for huge |r|
        sq = 0.5 * r * r / beta
    return np.where(quad, sq, a - 0.5 * beta), np.where(quad, r / beta, np.sign(r))


def depth_loss(pred, gt, beta: float = 1.0):
    """Smooth-L1 on log-depth residual. Returns (loss, d loss / d pred), elementwise."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if np.any(gt <= 0) or np.any(pred <= 0):
        raise NonPositiveDepth("depths must be positive")
    loss, dr = _smooth_l1(np.log(pred) - np.log(gt), beta)
    grad = dr / pred
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def loss_and_grad(model: IPHeadModel, F, wh, gt, beta: float = 1.0):
    """Mean loss over all (N, S) samples and its gradient w.r.t. every entry of ``model.params``."""
    p = model.params
    shape = model.target_shape
    Fs, h, theta = _thetas(model, F)
    pe = encode(wh, model.pe_config)
    raw, g = _target_forward(theta, pe, shape)
    gt = np.asarray(gt, dtype=float)
    if np.any(gt <= 0):
        raise NonPositiveDepth("depths must be positive")
    # log-space residual: exact same loss as depth_loss, but no overflow in exp
    loss, dr = _smooth_l1(math.log(model.d_ref) + raw - np.log(gt), beta)
    with np.errstate(over="ignore", under="ignore"):
        pred = model.d_ref * np.exp(raw)
    n = loss.size
    draw = dr / n

    _, _, w2, _ = shape.split(theta)
    dz = draw[:, :, None] * w2[:, None, :] * (1.0 - g * g)
    dtheta = np.concatenate(
        [
            (pe.transpose(0, 2, 1) @ dz).reshape(len(theta), -1),
            dz.sum(axis=1),
            (draw[:, None, :] @ g)[:, 0, :],
            draw.sum(axis=1, keepdims=True),
        ],
        axis=1,
    )
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    if model.weight_mode == "shared":
        grads["shared_theta"] = dtheta.sum(axis=0)
    else:
        grads["W2"] = h.T @ dtheta
        grads["b2"] = dtheta.sum(axis=0)
        da = (dtheta @ p["W2"].T) * (1.0 - h * h)
        grads["W1"] = Fs.T @ da
        grads["b1"] = da.sum(axis=0)
    return float(loss.mean()), grads, pred


# training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1000
    batch_size: int = 0  # 0 = full batch
    aug_samples: int = 8
    aug_low: float = 0.5
    aug_high: float = 3.0
    aug_max_depth: float = 250.0
    min_corner_depth: float = 0.5
    loss_beta: float = 1.0
    lr_final_frac: float = 0.05
    fit_d_ref: bool = True
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "adam_eps", "aug_low", "aug_high",
                     "aug_max_depth", "min_corner_depth", "loss_beta", "lr_final_frac"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigInvalid(name, f"must be finite and positive, got {val!r}")
        for name in ("beta1", "beta2"):
            if getattr(self, name) >= 1:
                raise ConfigInvalid(name, "must be < 1")
        if self.aug_low >= self.aug_high:
            raise ConfigInvalid("aug_low", "must be < aug_high")
        for name, lo in (("epochs", 1), ("eval_every", 1), ("batch_size", 0), ("aug_samples", 0), ("seed", 0)):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < lo:
                raise ConfigInvalid(name, f"must be an integer >= {lo}, got {val!r}")


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    heldout_epochs: list = field(default_factory=list)
    heldout_median_rel_err: list = field(default_factory=list)
    n_objects: int = 0
    samples_per_epoch: int = 0
    diverged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        # overflow here surfaces as a non-finite loss, reported as DivergedLoss
        with np.errstate(over="ignore", invalid="ignore"):
            for k in params:
                g = grads[k]
                self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
                self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
                params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)


def _min_valid_depth(objects_arrays, min_corner_depth):
    """Smallest depth along each object's ray keeping every corner at z >= min_corner_depth."""
    centers, sizes, yaws = objects_arrays
    # yaw is unchanged by sliding along the ray, so corner z offsets are fixed
    dz = box_corners(np.zeros_like(centers), sizes, yaws)[..., 2].min(axis=1)
    return np.maximum((min_corner_depth - dz), 1e-6)


def sample_augmented(K: CameraIntrinsics, objects_arrays, n_aug, cfg: TrainConfig, rng):
    """Draw ``n_aug`` projection-augmented (w2d, h2d, depth) triples per object.

    Depths are log-uniform in [aug_low*d, aug_high*d], clipped to the valid range.
    Returns wh (N, n_aug, 2) and depths (N, n_aug).
    """
    centers, sizes, yaws = objects_arrays
    n = len(centers)
    d = centers[:, 2]
    lo = np.log(cfg.aug_low * d)[:, None]
    hi = np.log(cfg.aug_high * d)[:, None]
    dstar = np.exp(lo + (hi - lo) * rng.random((n, n_aug)))
    dstar = np.clip(dstar, _min_valid_depth(objects_arrays, cfg.min_corner_depth)[:, None],
                    cfg.aug_max_depth)
    scale = dstar / d[:, None]
    moved = (centers[:, None, :] * scale[..., None]).reshape(-1, 3)
    boxes = project_boxes(K, moved, np.repeat(sizes, n_aug, axis=0), np.repeat(yaws, n_aug))
    return boxes[:, :2].reshape(n, n_aug, 2), dstar


def _objects_arrays(objects):
    return (np.array([o.center for o in objects], dtype=float).reshape(-1, 3),
            np.array([o.size for o in objects], dtype=float).reshape(-1, 3),
            np.array([o.yaw for o in objects], dtype=float))


def fit_feature_scaler(model: IPHeadModel, F: np.ndarray) -> None:
    model.feat_mean = F.mean(axis=0)
    scale = F.std(axis=0)
    model.feat_scale = np.where(scale > 1e-12, scale, 1.0)


def train(model: IPHeadModel, close_set, K: CameraIntrinsics | None, objects, cfg: TrainConfig,
          heldout=None):
    """Train ``model`` in place on close-range (feature, box, depth) triples.

    ``close_set`` is a tuple of arrays (F (N, D), wh (N, 2), depth (N,)).
    ``objects`` lists the N matching ObjectStates used for projection
    augmentation (required when ``cfg.aug_samples > 0``). ``heldout`` is an
    optional (F, wh, depth) tuple scored every ``cfg.eval_every`` epochs.
    Returns ``(model, TrainReport)``.
    """
    F, wh, depth = (np.asarray(a, dtype=float) for a in close_set)
    if len(F) == 0:
        raise EmptyTrainingSet("no close-range training objects")
    F = _check_features(model, F)
    if np.any(depth <= 0):
        raise NonPositiveDepth("training depths must be positive")
    n = len(F)
    n_aug = cfg.aug_samples
    if n_aug > 0:
        if K is None or objects is None or len(objects) != n:
            raise ValueError("projection augmentation needs the camera and one ObjectState per sample")
        obj_arrays = _objects_arrays(objects)

    rng = np.random.default_rng(cfg.seed)
    fit_feature_scaler(model, F)
    if cfg.fit_d_ref:
        # centre the exp parameterisation on the training depths
        model.d_ref = float(np.exp(np.log(depth).mean()))
    report = TrainReport(n_objects=n, samples_per_epoch=n * (1 + n_aug))
    trainable = ["shared_theta"] if model.weight_mode == "shared" else ["W1", "b1", "W2", "b2"]
    params = {k: model.params[k] for k in trainable}
    opt = _Adam(params, cfg)
    batch = cfg.batch_size or n

    for epoch in range(cfg.epochs):
        # cosine decay to lr_final_frac * lr
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.lr * (cfg.lr_final_frac + (1 - cfg.lr_final_frac) * 0.5 * (1 + math.cos(math.pi * frac)))
        if n_aug > 0:
            aug_wh, aug_d = sample_augmented(K, obj_arrays, n_aug, cfg, rng)
            all_wh = np.concatenate([wh[:, None, :], aug_wh], axis=1)
            all_d = np.concatenate([depth[:, None], aug_d], axis=1)
        else:
            all_wh, all_d = wh[:, None, :], depth[:, None]
        order = rng.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads, _ = loss_and_grad(model, F[idx], all_wh[idx], all_d[idx], cfg.loss_beta)
            if not math.isfinite(loss):
                report.diverged = True
                raise DivergedLoss(f"non-finite loss at epoch {epoch}", report)
            opt.step(params, {k: grads[k] for k in trainable}, lr)
            epoch_loss += loss * len(idx) / n
        report.epoch_loss.append(epoch_loss)
        if heldout is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            hF, hwh, hd = heldout
            if len(hd):
                err = np.abs(predict_depths(model, hF, hwh) - hd) / hd
                report.heldout_epochs.append(epoch + 1)
                report.heldout_median_rel_err.append(float(np.median(err)))
        if (epoch + 1) % 250 == 0:
            logger.info("epoch %d loss %.6f", epoch + 1, epoch_loss)
    return model, report


# diagnostics -------------------------------------------------------------


def gradient_check(model: IPHeadModel, sample, eps: float = 1e-4, beta: float = 1.0,
                   floor: float = 1e-7) -> float:
    """Max relative error between analytic and central-difference gradients over every parameter.

    ``sample`` is (F, wh, depth) for a single instance or a batch. Relative
    error is ``|a - n| / max(|a| + |n|, floor)``.
    """
    F, wh, gt = sample
    F = _check_features(model, F)
    wh = np.asarray(wh, dtype=float).reshape(len(F), -1, 2)
    gt = np.asarray(gt, dtype=float).reshape(len(F), -1)
    _, grads, _ = loss_and_grad(model, F, wh, gt, beta)

    def loss_at():
        pred = predict_depths(model, F, wh)
        return float(depth_loss(pred, gt, beta)[0].mean())

    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_at()
            flat[i] = orig - eps
            down = loss_at()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            rel = abs(gflat[i] - num) / max(abs(gflat[i]) + abs(num), floor)
            worst = max(worst, rel)
    return worst


def invert_projection(K: CameraIntrinsics, obj: ObjectState, target: float, use: str = "h2d",
                      lo: float | None = None, hi: float = 1e4, tol: float = 1e-10) -> float:
    """Depth along ``obj``'s ray at which its projected box has the given height (or width).

    Bisection on the monotone depth -> box-size map.
    """
    col = {"w2d": 0, "h2d": 1}[use]
    arrays = _objects_arrays([obj])
    if lo is None:
        lo = float(_min_valid_depth(arrays, 1e-6)[0]) * (1 + 1e-9)
    center = np.asarray(obj.center, dtype=float)

    def size_at(d):
        return project_boxes(K, center * (d / center[2]), arrays[1], arrays[2])[0, col]

    if size_at(hi) > target:
        return hi
    if size_at(lo) < target:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if size_at(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def dump_mapping_curve(model: IPHeadModel, F: InstanceFeature, sweep, K: CameraIntrinsics | None = None,
                       obj: ObjectState | None = None):
    """Predicted depth over a sweep of 2D boxes, plus bisection ground truth when ``K`` and ``obj`` are given.

    Returns a list of (w2d, h2d, predicted depth, gt depth or nan) rows.
    """
    sweep = list(sweep)
    if not sweep:
        return []
    wh = np.array([[b.w2d, b.h2d] for b in sweep])
    pred = predict_depths(model, np.tile(F.vec, (len(sweep), 1)), wh)
    rows = []
    for (w, h), d in zip(wh, pred):
        gt = float("nan")
        if K is not None and obj is not None:
            gt = invert_projection(K, obj, h if h > 0 else w, "h2d" if h > 0 else "w2d")
        rows.append((float(w), float(h), float(d), gt))
    return rows
