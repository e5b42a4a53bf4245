"""Desk-scale transformer encoder over feature tokens and label tokens,
trained with label-mask training (LMT).

Token sequence: H = {z_1 .. z_{h*w}, lt_1 .. lt_l} with the feature tokens
first and one token per label after them.  Each label token is the sum of
its learned embedding and a state embedding

    lt_i = l_i + s_i,   s in {Unknown: 0 (frozen), Negative, Positive}

and each encoder layer applies, exactly and with a single head,

    alpha_ij = softmax_j((h_i Wq) . (h_j Wk) / sqrt(d))
    hbar_i   = sum_j alpha_ij (h_j Wv)
    h'_i     = relu(hbar_i Wr + b1) Wo + b2

with no residual connections or layer normalization.  A per-label linear
head of size d reads each final label token through a sigmoid.

LMT masks a uniform-random 25..100% of the labels per sample (their state
becomes Unknown); the loss is computed over the masked labels only.  At
inference every label is Unknown, so the output cannot depend on the
ground truth.  The whole backward pass is analytic; `train_step` applies
Adam (b1=0.9, b2=0.999, eps=1e-8).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .imaging import RgbImage, bilinear_resize
from .losses import LossConfig, loss_grad, loss_value

PATCH = 16  # toy feature provider patch edge, px


class CTranError(Exception):
    pass


class DimMismatch(CTranError):
    pass


class NonFiniteLoss(CTranError):
    pass


class LabelState(IntEnum):
    UNKNOWN = 0
    NEGATIVE = 1
    POSITIVE = 2


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    h: int
    w: int
    values: np.ndarray  # (h*w, d)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.h * self.w:
            raise DimMismatch(f"expected ({self.h * self.w}, d) tokens, got {v.shape}")
        if v.size and not np.all(np.isfinite(v)):
            raise CTranError("non-finite feature values")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class EncoderLayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wr: np.ndarray
    b1: np.ndarray
    wo: np.ndarray
    b2: np.ndarray


@dataclass
class CTranParams:
    label_emb: np.ndarray  # (l, d)
    state_emb: np.ndarray  # (3, d); Unknown row frozen at zero
    layers: list[EncoderLayerParams]
    head_w: np.ndarray     # (l, d)
    head_b: np.ndarray     # (l,)

    @property
    def n_labels(self) -> int:
        return self.label_emb.shape[0]

    @property
    def d(self) -> int:
        return self.label_emb.shape[1]

    def named_arrays(self):
        yield "label_emb", self.label_emb
        yield "state_emb", self.state_emb
        for i, lay in enumerate(self.layers):
            for f in ("wq", "wk", "wv", "wr", "b1", "wo", "b2"):
                yield f"layers.{i}.{f}", getattr(lay, f)
        yield "head_w", self.head_w
        yield "head_b", self.head_b


def init_params(n_labels: int, d: int, n_layers: int = 3, seed: int = 0) -> CTranParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases; the Negative and
    Positive state rows start at constant -0.02 / +0.02."""
    rng = np.random.default_rng(seed)
    lim = 1.0 / math.sqrt(d)

    def u(*shape):
        return rng.uniform(-lim, lim, size=shape)

    state = np.zeros((3, d))
    state[LabelState.NEGATIVE] = -0.02
    state[LabelState.POSITIVE] = +0.02
    layers = [EncoderLayerParams(wq=u(d, d), wk=u(d, d), wv=u(d, d),
                                 wr=u(d, d), b1=np.zeros(d),
                                 wo=u(d, d), b2=np.zeros(d))
              for _ in range(n_layers)]
    return CTranParams(label_emb=u(n_labels, d), state_emb=state, layers=layers,
                       head_w=u(n_labels, d), head_b=np.zeros(n_labels))


def embed_labels(params: CTranParams, states) -> np.ndarray:
    """Label tokens lt_i = l_i + s(state_i)."""
    states = np.asarray(states, dtype=int)
    if states.shape != (params.n_labels,):
        raise DimMismatch(f"expected {params.n_labels} states, got {states.shape}")
    return params.label_emb + params.state_emb[states]


def _layer_forward(lay: EncoderLayerParams, h: np.ndarray, dropout_mask=None):
    """One encoder layer on a (B, M, d) batch; returns output and cache."""
    d = h.shape[-1]
    q = h @ lay.wq
    k = h @ lay.wk
    v = h @ lay.wv
    s = q @ k.transpose(0, 2, 1) / math.sqrt(d)
    s = s - s.max(axis=2, keepdims=True)
    e = np.exp(s)
    alpha = e / e.sum(axis=2, keepdims=True)
    hbar = alpha @ v
    u = hbar @ lay.wr + lay.b1
    a = np.maximum(u, 0.0)
    out = a @ lay.wo + lay.b2
    if dropout_mask is not None:
        out = out * dropout_mask
    cache = (h, q, k, v, alpha, hbar, u, a, dropout_mask)
    return out, cache


def _layer_backward(lay: EncoderLayerParams, cache, dout):
    h, q, k, v, alpha, hbar, u, a, dropout_mask = cache
    d = h.shape[-1]
    if dropout_mask is not None:
        dout = dout * dropout_mask
    dwo = np.einsum("bmd,bme->de", a, dout)
    db2 = dout.sum(axis=(0, 1))
    da = dout @ lay.wo.T
    du = da * (u > 0)
    dwr = np.einsum("bmd,bme->de", hbar, du)
    db1 = du.sum(axis=(0, 1))
    dhbar = du @ lay.wr.T
    dalpha = dhbar @ v.transpose(0, 2, 1)
    dv = alpha.transpose(0, 2, 1) @ dhbar
    ds = alpha * (dalpha - (dalpha * alpha).sum(axis=2, keepdims=True))
    ds = ds / math.sqrt(d)
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dwq = np.einsum("bmd,bme->de", h, dq)
    dwk = np.einsum("bmd,bme->de", h, dk)
    dwv = np.einsum("bmd,bme->de", h, dv)
    dh = dq @ lay.wq.T + dk @ lay.wk.T + dv @ lay.wv.T
    grads = {"wq": dwq, "wk": dwk, "wv": dwv, "wr": dwr, "b1": db1, "wo": dwo, "b2": db2}
    return dh, grads


def encoder_layer(lay: EncoderLayerParams, tokens: np.ndarray) -> np.ndarray:
    """Single-sequence encoder layer update (the three equations above)."""
    tokens = np.asarray(tokens, dtype=float)
    out, _ = _layer_forward(lay, tokens[None])
    return out[0]


def attention_matrix(lay: EncoderLayerParams, tokens: np.ndarray) -> np.ndarray:
    """The normalized attention coefficients for one token sequence."""
    tokens = np.asarray(tokens, dtype=float)
    _, cache = _layer_forward(lay, tokens[None])
    return cache[4][0]


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _batch_forward(params, feats, states, dropout_rate, train_mode, rng):
    """feats (B, M_feat, d), states (B, l).  Returns probs, logits, caches."""
    b = feats.shape[0]
    label_tokens = params.label_emb[None] + params.state_emb[states]
    h = np.concatenate([feats, label_tokens], axis=1)
    caches = []
    for lay in params.layers:
        mask = None
        if train_mode and dropout_rate > 0.0:
            keep = rng.random(size=(b, h.shape[1], params.d)) >= dropout_rate
            mask = keep / (1.0 - dropout_rate)
        h, cache = _layer_forward(lay, h, mask)
        caches.append(cache)
    h_labels = h[:, feats.shape[1]:, :]
    logits = (h_labels * params.head_w[None]).sum(axis=2) + params.head_b[None]
    return _sigmoid(logits), logits, (caches, h_labels)


def forward(params: CTranParams, features: FeatureGrid, states=None, *,
            dropout_rate: float = 0.0, train_mode: bool = False, rng=None) -> np.ndarray:
    """Per-label probabilities for one sample.

    `states` defaults to all-Unknown, the inference convention; pass the
    LMT states during training.
    """
    if features.d != params.d:
        raise DimMismatch(f"feature dim {features.d} != model dim {params.d}")
    if states is None:
        states = np.full(params.n_labels, LabelState.UNKNOWN, dtype=int)
    states = np.asarray(states, dtype=int)
    if states.shape != (params.n_labels,):
        raise DimMismatch(f"expected {params.n_labels} states, got {states.shape}")
    if train_mode and dropout_rate > 0.0 and rng is None:
        raise CTranError("training-mode dropout needs an rng")
    probs, _, _ = _batch_forward(params, features.values[None], states[None],
                                 dropout_rate, train_mode, rng)
    return probs[0]


def lmt_mask(y, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw the label-mask-training states for one sample.

    The number of masked labels is uniform on [ceil(0.25 l), l]; masked
    labels become Unknown, the rest carry their true state.
    """
    y = np.asarray(y, dtype=int)
    l = len(y)
    if l < 1:
        raise CTranError("need at least one label")
    n_min = math.ceil(0.25 * l)
    n_masked = int(rng.integers(n_min, l + 1))
    masked = np.sort(rng.choice(l, size=n_masked, replace=False))
    states = np.where(y == 1, LabelState.POSITIVE, LabelState.NEGATIVE).astype(int)
    states[masked] = LabelState.UNKNOWN
    return states, masked


def _zero_grads(params: CTranParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def _mask_cfg(loss_cfg: LossConfig, masked) -> LossConfig:
    """Per-label weights follow the masked subvector the loss sees."""
    if loss_cfg.weights is None:
        return loss_cfg
    w = np.asarray(loss_cfg.weights)[masked]
    return replace(loss_cfg, weights=tuple(w))


def batch_loss(params, feats, states, masked_sets, y, loss_cfg,
               dropout_rate=0.0, train_mode=False, rng=None) -> float:
    probs, _, _ = _batch_forward(params, feats, states, dropout_rate, train_mode, rng)
    total = 0.0
    for i, masked in enumerate(masked_sets):
        total += loss_value(_mask_cfg(loss_cfg, masked), y[i][masked], probs[i][masked])
    return total / len(masked_sets)


def batch_loss_and_grads(params, feats, states, masked_sets, y, loss_cfg,
                         dropout_rate=0.0, train_mode=False, rng=None):
    """Loss over the masked labels plus analytic gradients for every
    parameter.  The Unknown state row's gradient is forced to zero."""
    b = feats.shape[0]
    probs, logits, (caches, h_labels) = _batch_forward(
        params, feats, states, dropout_rate, train_mode, rng)

    total = 0.0
    dlogits = np.zeros_like(logits)
    for i, masked in enumerate(masked_sets):
        cfg_i = _mask_cfg(loss_cfg, masked)
        total += loss_value(cfg_i, y[i][masked], probs[i][masked])
        dlogits[i][masked] = loss_grad(cfg_i, y[i][masked], probs[i][masked])
    loss = total / b
    dlogits /= b

    grads = _zero_grads(params)
    grads["head_w"] = (dlogits[..., None] * h_labels).sum(axis=0)
    grads["head_b"] = dlogits.sum(axis=0)
    dh = np.zeros((b, feats.shape[1] + params.n_labels, params.d))
    dh[:, feats.shape[1]:, :] = dlogits[..., None] * params.head_w[None]

    for i in range(len(params.layers) - 1, -1, -1):
        dh, layer_grads = _layer_backward(params.layers[i], caches[i], dh)
        for f, g in layer_grads.items():
            grads[f"layers.{i}.{f}"] = g

    dlab = dh[:, feats.shape[1]:, :]  # (B, l, d)
    grads["label_emb"] = dlab.sum(axis=0)
    for s in (LabelState.NEGATIVE, LabelState.POSITIVE):
        sel = states == int(s)
        if sel.any():
            grads["state_emb"][int(s)] = dlab[sel].sum(axis=0)
    return loss, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(params: CTranParams) -> AdamState:
    return AdamState(m=_zero_grads(params), v=_zero_grads(params))


def adam_step(params: CTranParams, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.t += 1
    for name, arr in params.named_arrays():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** state.t)
        v_hat = state.v[name] / (1 - beta2 ** state.t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _features_array(features_batch) -> np.ndarray:
    if isinstance(features_batch, np.ndarray):
        return features_batch
    return np.stack([f.values for f in features_batch])


def train_step(params: CTranParams, features_batch, y_batch, loss_cfg: LossConfig,
               lr: float, adam: AdamState, rng, dropout_rate: float = 0.1) -> float:
    """One LMT training step over a batch; updates `params` in place.

    Raises NonFiniteLoss (leaving the parameters untouched) when the batch
    loss is not finite.
    """
    feats = _features_array(features_batch)
    y = np.asarray(y_batch, dtype=int)
    if feats.shape[2] != params.d:
        raise DimMismatch(f"feature dim {feats.shape[2]} != model dim {params.d}")
    if y.shape != (feats.shape[0], params.n_labels):
        raise DimMismatch(f"expected labels {(feats.shape[0], params.n_labels)}, got {y.shape}")
    states = np.empty((len(y), params.n_labels), dtype=int)
    masked_sets = []
    for i in range(len(y)):
        states[i], masked = lmt_mask(y[i], rng)
        masked_sets.append(masked)
    loss, grads = batch_loss_and_grads(params, feats, states, masked_sets, y, loss_cfg,
                                       dropout_rate=dropout_rate, train_mode=True, rng=rng)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss {loss}")
    adam_step(params, grads, adam, lr)
    return loss


def toy_feature_provider(img: RgbImage, h: int, w: int, d: int, seed: int) -> FeatureGrid:
    """Stand-in feature extractor: resize to an (h*16, w*16) patch grid,
    flatten each 16x16 RGB patch, project through a fixed seeded random
    matrix to dim d, and standardize each token."""
    resized = bilinear_resize(img.pixels, h * PATCH, w * PATCH)
    patches = (resized.reshape(h, PATCH, w, PATCH, 3)
                      .transpose(0, 2, 1, 3, 4)
                      .reshape(h * w, PATCH * PATCH * 3))
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(PATCH * PATCH * 3, d)) / math.sqrt(PATCH * PATCH * 3)
    tokens = patches @ proj
    mu = tokens.mean(axis=1, keepdims=True)
    sd = tokens.std(axis=1, keepdims=True)
    tokens = np.where(sd > 0, (tokens - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return FeatureGrid(h, w, tokens)


def synthetic_task(n_samples: int, n_labels: int, h: int, w: int, d: int,
                   seed: int, noise: float = 0.25):
    """Linearly separable toy task: every token is the sum of the active
    labels' prototype vectors plus Gaussian noise.  Returns
    (features (n, h*w, d), labels (n, l))."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(n_labels, d))
    y = rng.integers(0, 2, size=(n_samples, n_labels))
    signal = y @ protos  # (n, d)
    feats = signal[:, None, :] + noise * rng.normal(size=(n_samples, h * w, d))
    return feats, y


def save_checkpoint(params: CTranParams, meta: dict, path) -> None:
    """Tensor dump (.npz): one array per parameter plus a JSON meta record
    carrying at least n_labels, d and n_layers."""
    arrays = dict(params.named_arrays())
    meta = dict(meta)
    meta.update(n_labels=params.n_labels, d=params.d, n_layers=len(params.layers))
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[CTranParams, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        layers = [EncoderLayerParams(**{f: z[f"layers.{i}.{f}"]
                                        for f in ("wq", "wk", "wv", "wr", "b1", "wo", "b2")})
                  for i in range(meta["n_layers"])]
        params = CTranParams(label_emb=z["label_emb"], state_emb=z["state_emb"],
                             layers=layers, head_w=z["head_w"], head_b=z["head_b"])
    return params, meta
