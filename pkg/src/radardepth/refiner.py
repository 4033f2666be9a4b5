"""Small numpy radar-refinement network with hand-written backprop.

Per frame, K radar points are encoded by an MLP and each point's image patch
by a strided patch embedding. Stacked layers apply radar self-attention
followed by per-point radar->patch cross-attention (both residual), then two
MLP heads predict a confidence logit and a 2-D pixel displacement.

Row-major shapes are used throughout: radar features are (K, D) and patch
features (K, N_img, D).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

BCE_EPS = 1e-7
SMOOTH_L1_BETA = 1.0
DEPTH_CODE_REF = 2.0


@dataclass(frozen=True)
class RefinerConfig:
    radar_in: int = 3
    radar_mlp_widths: tuple[int, ...] = (32, 64)
    patch_size: tuple[int, int] = (35, 35)
    patch_channels: int = 1
    patch_cell: int = 7
    patch_encoder_widths: tuple[int, ...] = (32,)
    attention_dim: int = 32
    num_attention_layers: int = 2
    head_hidden: int = 32
    lambda_conf: float = 1.0
    lambda_disp: float = 1.0
    tau: float = 0.5
    learning_rate: float = 2e-3
    epochs: int = 60
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radar_mlp_widths", tuple(int(w) for w in self.radar_mlp_widths))
        object.__setattr__(self, "patch_encoder_widths", tuple(int(w) for w in self.patch_encoder_widths))
        object.__setattr__(self, "patch_size", tuple(int(s) for s in self.patch_size))
        if not self.radar_mlp_widths or min(self.radar_mlp_widths) <= 0:
            raise ValueError("radar_mlp_widths must be nonempty and positive")
        if self.attention_dim <= 0:
            raise ValueError("attention_dim must be positive")
        if self.lambda_conf < 0 or self.lambda_disp < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        h, w = self.patch_size
        if h % self.patch_cell or w % self.patch_cell:
            raise ValueError("patch_size must be a multiple of patch_cell")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid optimizer settings")

    @property
    def feature_dim(self) -> int:
        return self.radar_mlp_widths[-1]

    @property
    def n_img(self) -> int:
        return (self.patch_size[0] // self.patch_cell) * (self.patch_size[1] // self.patch_cell)

    @property
    def cell_dim(self) -> int:
        return self.patch_channels * self.patch_cell ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown refiner config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: RefinerConfig) -> list[tuple[str, tuple[int, ...]]]:
    D, dk = config.feature_dim, config.attention_dim
    shapes = []
    prev = config.radar_in
    for i, w in enumerate(config.radar_mlp_widths):
        shapes += [(f"radar.W{i}", (prev, w)), (f"radar.b{i}", (w,))]
        prev = w
    prev = config.cell_dim
    for i, w in enumerate(config.patch_encoder_widths + (D,)):
        shapes += [(f"patch.W{i}", (prev, w)), (f"patch.b{i}", (w,))]
        prev = w
    shapes.append(("patch.pos", (config.n_img, D)))
    for layer in range(config.num_attention_layers):
        for kind in ("sa", "ca"):
            p = f"layer{layer}.{kind}"
            shapes += [(f"{p}.Wq", (D, dk)), (f"{p}.Wk", (D, dk)),
                       (f"{p}.Wv", (D, dk)), (f"{p}.Wo", (dk, D))]
    for head, out in (("conf", 1), ("disp", 2)):
        shapes += [(f"{head}.W0", (D, config.head_hidden)), (f"{head}.b0", (config.head_hidden,)),
                   (f"{head}.W1", (config.head_hidden, out)), (f"{head}.b1", (out,))]
    return shapes


@dataclass
class RefinerParams:
    """Flat float64 parameter vector plus a name -> (offset, shape) index."""

    config: RefinerConfig
    vector: np.ndarray
    index: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            offset = 0
            for name, shape in param_shapes(self.config):
                self.index[name] = (offset, shape)
                offset += int(np.prod(shape))
        size = sum(int(np.prod(s)) for _, s in self.index.values())
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        if self.vector.shape != (size,):
            raise ValueError(f"parameter vector has {self.vector.size} entries, expected {size}")

    def __getitem__(self, name: str) -> np.ndarray:
        offset, shape = self.index[name]
        return self.vector[offset:offset + int(np.prod(shape))].reshape(shape)

    def names(self) -> list[str]:
        return list(self.index)

    def copy(self) -> "RefinerParams":
        return RefinerParams(self.config, self.vector.copy(), dict(self.index))

    def with_vector(self, vector) -> "RefinerParams":
        return RefinerParams(self.config, np.array(vector, dtype=np.float64), dict(self.index))

    @classmethod
    def zeros(cls, config: RefinerConfig) -> "RefinerParams":
        n = sum(int(np.prod(s)) for _, s in param_shapes(config))
        return cls(config, np.zeros(n))

    @classmethod
    def init(cls, config: RefinerConfig, seed: int | None = None) -> "RefinerParams":
        """Fan-in scaled Gaussian weights, zero biases; attention outputs start small."""
        rng = np.random.default_rng(config.seed if seed is None else seed)
        params = cls.zeros(config)
        for name, shape in param_shapes(config):
            leaf = name.rsplit(".", 1)[1]
            if leaf.startswith("b"):
                continue
            if leaf == "pos":
                params[name][...] = 0.1 * rng.standard_normal(shape)
                continue
            scale = np.sqrt(2.0 / shape[0]) if leaf.startswith("W") and leaf[1:].isdigit() else np.sqrt(1.0 / shape[0])
            if leaf == "Wo":
                scale *= 0.5
            params[name][...] = scale * rng.standard_normal(shape)
        return params


@dataclass
class RefinerOutput:
    confidence: np.ndarray
    displacement: np.ndarray


@dataclass
class Sample:
    """One frame's worth of radar points with patches and (optional) labels."""

    features: np.ndarray
    patches: np.ndarray
    conf_label: np.ndarray | None = None
    disp_label: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.patches = np.asarray(self.patches, dtype=float)
        if self.patches.ndim == 3:
            self.patches = self.patches[:, None]
        K = len(self.features)
        if len(self.patches) != K:
            raise ValueError("need exactly one patch per radar point")
        if self.conf_label is not None:
            self.conf_label = np.asarray(self.conf_label, dtype=float).reshape(K)
            self.disp_label = np.asarray(self.disp_label, dtype=float).reshape(K, 2)
            self.valid = (np.ones(K, dtype=bool) if self.valid is None
                          else np.asarray(self.valid, dtype=bool).reshape(K))


def depth_code(depth) -> np.ndarray:
    """Compressed inverse-depth code in (0, 1] for depths >= DEPTH_CODE_REF."""
    return np.sqrt(DEPTH_CODE_REF / np.asarray(depth, dtype=float))


def radar_features(points, width: int, height: int) -> np.ndarray:
    """(K, 3) features: centered normalized pixel coordinates and depth code."""
    return np.array([[p.u / width - 0.5, p.v / height - 0.5, float(depth_code(p.depth))]
                     for p in points], dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------- primitives

def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _mlp_forward(x, weights, biases, final_relu=False):
    acts = [x]
    h = x
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if i < len(weights) - 1 or final_relu:
            h = _relu(h)
        acts.append(h)
    return h, acts


def _mlp_backward(dout, weights, acts, final_relu=False):
    """Returns (dx, [dW], [db]); `acts` from _mlp_forward."""
    dWs, dbs = [], []
    d = dout
    n = len(weights)
    for i in range(n - 1, -1, -1):
        if i < n - 1 or final_relu:
            d = d * (acts[i + 1] > 0)
        x = acts[i]
        dWs.append(x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1]))
        dbs.append(d.reshape(-1, d.shape[-1]).sum(axis=0))
        d = d @ weights[i].T
    return d, dWs[::-1], dbs[::-1]


def _patch_cells(patches, cell):
    """(K, C, h, w) -> (K, N_img, C*cell*cell) non-overlapping cells, row-major grid."""
    K, C, h, w = patches.shape
    gh, gw = h // cell, w // cell
    x = patches.reshape(K, C, gh, cell, gw, cell).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(K, gh * gw, C * cell * cell)


def _attention_forward(q_in, kv_in, Wq, Wk, Wv, Wo):
    """Batched single-head attention: q_in (..., Lq, D), kv_in (..., Lk, D)."""
    dk = Wq.shape[1]
    Q = q_in @ Wq
    K = kv_in @ Wk
    V = kv_in @ Wv
    S = Q @ np.swapaxes(K, -1, -2) / np.sqrt(dk)
    A = _softmax(S)
    H = A @ V
    out = H @ Wo
    return out, (q_in, kv_in, Q, K, V, A, H)


def _attention_backward(dout, cache, Wq, Wk, Wv, Wo):
    q_in, kv_in, Q, K, V, A, H = cache
    dk = Wq.shape[1]

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    dWo = flat(H).T @ flat(dout)
    dH = dout @ Wo.T
    dA = dH @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(A, -1, -2) @ dH
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / np.sqrt(dk)
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    dWq = flat(q_in).T @ flat(dQ)
    dWk = flat(kv_in).T @ flat(dK)
    dWv = flat(kv_in).T @ flat(dV)
    dq_in = dQ @ Wq.T
    dkv_in = dK @ Wk.T + dV @ Wv.T
    return dq_in, dkv_in, (dWq, dWk, dWv, dWo)


def _layer_weights(params: RefinerParams, prefix: str):
    return tuple(params[f"{prefix}.{n}"] for n in ("Wq", "Wk", "Wv", "Wo"))


# ---------------------------------------------------------------- public ops

def encode_radar(features, params: RefinerParams) -> np.ndarray:
    """Per-point MLP, ReLU between layers: (K, radar_in) -> (K, D)."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.config.radar_in:
        raise ValueError(f"radar features must be (K, {params.config.radar_in})")
    if not np.all(np.isfinite(x)):
        raise ValueError("radar features must be finite")
    n = len(params.config.radar_mlp_widths)
    out, _ = _mlp_forward(x, [params[f"radar.W{i}"] for i in range(n)],
                          [params[f"radar.b{i}"] for i in range(n)])
    return out


def _encode_patches(patches, params: RefinerParams):
    cfg = params.config
    patches = np.asarray(patches, dtype=float)
    if patches.ndim == 3:
        patches = patches[None]
    if patches.shape[1:] != (cfg.patch_channels,) + cfg.patch_size:
        raise ValueError(f"patch shape {patches.shape[1:]} does not match "
                         f"{(cfg.patch_channels,) + cfg.patch_size}")
    cells = _patch_cells(patches, cfg.patch_cell)
    n = len(cfg.patch_encoder_widths) + 1
    Ws = [params[f"patch.W{i}"] for i in range(n)]
    bs = [params[f"patch.b{i}"] for i in range(n)]
    feats, acts = _mlp_forward(cells, Ws, bs)
    return feats + params["patch.pos"], (acts, Ws)


def encode_patch(patch, params: RefinerParams) -> np.ndarray:
    """Image features of one (C, h, w) patch as a (D, N_img) matrix."""
    pixels = getattr(patch, "pixels", patch)
    feats, _ = _encode_patches(np.asarray(pixels)[None], params)
    return feats[0].T


def self_attention(x_rad, params: RefinerParams, layer: int = 0) -> np.ndarray:
    """Single-head self-attention over the (K, D) radar features of one frame."""
    out, _ = _attention_forward(np.asarray(x_rad, dtype=float), np.asarray(x_rad, dtype=float),
                                *_layer_weights(params, f"layer{layer}.sa"))
    return out


def attention_weights(q_in, kv_in, Wq, Wk) -> np.ndarray:
    S = (np.asarray(q_in) @ Wq) @ np.swapaxes(np.asarray(kv_in) @ Wk, -1, -2) / np.sqrt(Wq.shape[1])
    return _softmax(S)


def cross_attention(x_rad, x_img, params: RefinerParams, layer: int = 0) -> np.ndarray:
    """Each radar point (row of the (K, D) input) attends over its own patch.

    `x_img` is (K, D, N_img), one column per patch cell.
    """
    x_rad = np.asarray(x_rad, dtype=float)
    img = np.swapaxes(np.asarray(x_img, dtype=float), -1, -2)
    out, _ = _attention_forward(x_rad[:, None, :], img, *_layer_weights(params, f"layer{layer}.ca"))
    return out[:, 0, :]


def _forward_sample(features, patches, params: RefinerParams):
    cfg = params.config
    nr = len(cfg.radar_mlp_widths)
    rW = [params[f"radar.W{i}"] for i in range(nr)]
    rb = [params[f"radar.b{i}"] for i in range(nr)]
    x, r_acts = _mlp_forward(np.asarray(features, dtype=float), rW, rb)
    img, p_cache = _encode_patches(patches, params)
    layer_caches = []
    for layer in range(cfg.num_attention_layers):
        sa_w = _layer_weights(params, f"layer{layer}.sa")
        ca_w = _layer_weights(params, f"layer{layer}.ca")
        sa_out, sa_cache = _attention_forward(x, x, *sa_w)
        x = x + sa_out
        ca_out, ca_cache = _attention_forward(x[:, None, :], img, *ca_w)
        x = x + ca_out[:, 0, :]
        layer_caches.append((sa_cache, ca_cache))
    heads = {}
    for head in ("conf", "disp"):
        Ws = [params[f"{head}.W0"], params[f"{head}.W1"]]
        bs = [params[f"{head}.b0"], params[f"{head}.b1"]]
        heads[head] = _mlp_forward(x, Ws, bs)
    logit = heads["conf"][0][:, 0]
    cache = (r_acts, rW, p_cache, layer_caches, heads, x)
    return logit, heads["disp"][0], cache


def forward(features, patches, params: RefinerParams) -> RefinerOutput:
    """Confidence in (0, 1) and displacement (pixels) for each radar point of one frame."""
    features = np.asarray(features, dtype=float)
    patches = np.asarray(patches, dtype=float)
    if patches.ndim == 3:
        patches = patches[:, None]
    if len(features) != len(patches):
        raise ValueError("need exactly one patch per radar point")
    logit, disp, _ = _forward_sample(features, patches, params)
    return RefinerOutput(_sigmoid(logit), disp)


# ---------------------------------------------------------------- losses

def _check_valid(valid):
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("loss needs at least one valid point")
    return valid


def bce_terms(pred, target):
    p = np.clip(np.asarray(pred, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(target, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def smooth_l1(residual):
    r = np.abs(np.asarray(residual, dtype=float))
    return np.where(r < SMOOTH_L1_BETA, 0.5 * r ** 2 / SMOOTH_L1_BETA, r - 0.5 * SMOOTH_L1_BETA)


def loss_conf(confidence, labels, valid) -> float:
    """Mean binary cross-entropy over the valid points."""
    valid = _check_valid(valid)
    return float(np.mean(bce_terms(confidence, labels)[valid]))


def loss_disp(displacement, labels, valid) -> float:
    """Mean over valid points of the per-point Smooth-L1 summed over (du, dv)."""
    valid = _check_valid(valid)
    r = np.asarray(displacement, dtype=float).reshape(-1, 2) - np.asarray(labels, dtype=float).reshape(-1, 2)
    return float(np.mean(smooth_l1(r).sum(axis=1)[valid]))


def loss_total(conf_loss: float, disp_loss: float, config: RefinerConfig) -> float:
    return config.lambda_conf * conf_loss + config.lambda_disp * disp_loss


# ---------------------------------------------------------------- gradient

def _backward_sample(dlogit, ddisp, cache, params: RefinerParams, grad: RefinerParams):
    cfg = params.config
    r_acts, rW, (p_acts, pW), layer_caches, heads, _ = cache
    dx = 0.0
    for head, dout in (("conf", dlogit[:, None]), ("disp", ddisp)):
        Ws = [params[f"{head}.W0"], params[f"{head}.W1"]]
        dh, dWs, dbs = _mlp_backward(dout, Ws, heads[head][1])
        for i in range(2):
            grad[f"{head}.W{i}"][...] += dWs[i]
            grad[f"{head}.b{i}"][...] += dbs[i]
        dx = dx + dh
    dimg = 0.0
    for layer in range(cfg.num_attention_layers - 1, -1, -1):
        sa_cache, ca_cache = layer_caches[layer]
        ca_w = _layer_weights(params, f"layer{layer}.ca")
        dq, dkv, dws = _attention_backward(dx[:, None, :], ca_cache, *ca_w)
        for n, dw in zip(("Wq", "Wk", "Wv", "Wo"), dws):
            grad[f"layer{layer}.ca.{n}"][...] += dw
        dx = dx + dq[:, 0, :]
        dimg = dimg + dkv
        sa_w = _layer_weights(params, f"layer{layer}.sa")
        dq, dkv, dws = _attention_backward(dx, sa_cache, *sa_w)
        for n, dw in zip(("Wq", "Wk", "Wv", "Wo"), dws):
            grad[f"layer{layer}.sa.{n}"][...] += dw
        dx = dx + dq + dkv
    if cfg.num_attention_layers:
        grad["patch.pos"][...] += dimg.sum(axis=0)
        _, dWs, dbs = _mlp_backward(dimg, pW, p_acts)
        for i in range(len(pW)):
            grad[f"patch.W{i}"][...] += dWs[i]
            grad[f"patch.b{i}"][...] += dbs[i]
    _, dWs, dbs = _mlp_backward(dx, rW, r_acts)
    for i in range(len(rW)):
        grad[f"radar.W{i}"][...] += dWs[i]
        grad[f"radar.b{i}"][...] += dbs[i]


def batch_loss(params: RefinerParams, batch: Sequence[Sample]) -> tuple[float, float, float]:
    """(total, conf, disp) losses pooled over every valid point of the batch."""
    confs, disps, yc, yd, valid = [], [], [], [], []
    for s in batch:
        out = forward(s.features, s.patches, params)
        confs.append(out.confidence)
        disps.append(out.displacement)
        yc.append(s.conf_label)
        yd.append(s.disp_label)
        valid.append(s.valid)
    confs, disps = np.concatenate(confs), np.concatenate(disps)
    yc, yd, valid = np.concatenate(yc), np.concatenate(yd), np.concatenate(valid)
    lc = loss_conf(confs, yc, valid)
    ld = loss_disp(disps, yd, valid)
    return loss_total(lc, ld, params.config), lc, ld


def loss_and_gradient(params: RefinerParams, batch: Sequence[Sample]):
    """Returns (total, conf, disp, flat gradient of total)."""
    cfg = params.config
    n_valid = sum(int(np.count_nonzero(s.valid)) for s in batch)
    if n_valid == 0:
        raise ValueError("batch has no valid points")
    grad = RefinerParams.zeros(cfg)
    conf_sum = disp_sum = 0.0
    for s in batch:
        logit, disp, cache = _forward_sample(s.features, s.patches, params)
        y = _sigmoid(logit)
        v = s.valid.astype(float)
        conf_sum += float(np.sum(bce_terms(y, s.conf_label) * v))
        r = disp - s.disp_label
        disp_sum += float(np.sum(smooth_l1(r).sum(axis=1) * v))
        clamped = (y < BCE_EPS) | (y > 1.0 - BCE_EPS)
        dlogit = np.where(clamped, 0.0, y - s.conf_label) * v * cfg.lambda_conf / n_valid
        ddisp = np.clip(r, -SMOOTH_L1_BETA, SMOOTH_L1_BETA) / SMOOTH_L1_BETA * v[:, None] * cfg.lambda_disp / n_valid
        _backward_sample(dlogit, ddisp, cache, params, grad)
    lc, ld = conf_sum / n_valid, disp_sum / n_valid
    g = grad.vector
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return loss_total(lc, ld, cfg), lc, ld, g


def gradient(params: RefinerParams, batch: Sequence[Sample]) -> np.ndarray:
    return loss_and_gradient(params, batch)[3]
