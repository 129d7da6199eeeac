"""Mixer network over ranked node patches, with hand-written backprop.

Shapes: a batch of patches is (n, p, d). Each layer applies

    patch mixing:   LN over the patch axis, MLP p -> hidden_p -> p
    feature mixing: LN over the feature axis, MLP d -> hidden_f -> d

with dropout after each block in training mode. The patch axis is then
aggregated and a d -> hidden -> C head produces logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DegenerateError, ShapeError, StateError

AGGREGATIONS = ("mean", "sum", "flatten")
NONLINEARITIES = ("gelu", "relu", "tanh")
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------

def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def nonlinearity(name: str, x):
    if name == "gelu":
        return gelu(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown nonlinearity {name!r}")


def nonlinearity_grad(name: str, x):
    if name == "gelu":
        return gelu_grad(x)
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    raise ValueError(f"unknown nonlinearity {name!r}")


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize over the last axis, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _ln_forward(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _ln_backward(dy, cache):
    xhat, inv, gain = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def _mlp_forward(x, w1, b1, w2, b2, act):
    h = x @ w1 + b1
    if act == "gelu":
        # keep the normal CDF for the backward pass
        cdf = 0.5 * (1.0 + erf(h / _SQRT2))
        a = h * cdf
    else:
        cdf = None
        a = nonlinearity(act, h)
    return a @ w2 + b2, (x, h, a, cdf)


def _mlp_backward(dy, cache, w1, w2, act):
    x, h, a, cdf = cache
    dw2 = np.tensordot(a, dy, axes=(tuple(range(a.ndim - 1)), tuple(range(dy.ndim - 1))))
    db2 = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    if cdf is not None:
        local = cdf + h * _INV_SQRT_2PI * np.exp(-0.5 * h * h)
    else:
        local = nonlinearity_grad(act, h)
    dh = (dy @ w2.T) * local
    dw1 = np.tensordot(x, dh, axes=(tuple(range(x.ndim - 1)), tuple(range(dh.ndim - 1))))
    db1 = dh.reshape(-1, dh.shape[-1]).sum(axis=0)
    return dh @ w1.T, dw1, db1, dw2, db2


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MixerModel:
    """Parameters plus the hyperparameters that fix their shapes.

    ``version`` increases on every in-place parameter update so stale
    forward tapes can be detected.
    """

    params: dict
    p: int
    d: int
    num_classes: int
    layers: int = 2
    hidden: int = 64
    hidden_p: int = 16
    hidden_f: int = 64
    dropout: float = 0.5
    activation: str = "gelu"
    residual: bool = False
    aggregation: str = "mean"
    ln_eps: float = 1e-5
    seed: int = 0
    soft_weights: bool = False
    version: int = 0

    def config(self) -> dict:
        return {
            "p": self.p, "d": self.d, "num_classes": self.num_classes, "layers": self.layers,
            "hidden": self.hidden, "hidden_p": self.hidden_p, "hidden_f": self.hidden_f,
            "dropout": self.dropout, "activation": self.activation, "residual": self.residual,
            "aggregation": self.aggregation, "ln_eps": self.ln_eps, "seed": self.seed,
            "soft_weights": self.soft_weights,
        }

    def param_names(self) -> list[str]:
        return list(self.params)

    def touch(self):
        self.version += 1

    def copy(self) -> "MixerModel":
        return MixerModel({k: v.copy() for k, v in self.params.items()}, version=self.version,
                          **self.config())

    def layer(self, l: int) -> dict:
        pre = f"layer{l}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_mixer(p: int, d: int, num_classes: int, layers: int = 2, hidden: int = 64,
               hidden_p: int | None = None, hidden_f: int = 64, dropout: float = 0.5,
               activation: str = "gelu", residual: bool = False, aggregation: str = "mean",
               ln_eps: float = 1e-5, seed: int = 0, soft_weights: bool = False) -> MixerModel:
    if min(p, d, num_classes, hidden, hidden_f) < 1 or layers < 0:
        raise ShapeError("mixer dimensions must be positive")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if activation not in NONLINEARITIES:
        raise ValueError(f"unknown nonlinearity {activation!r}")
    hidden_p = 2 * p if hidden_p is None else int(hidden_p)
    rng = np.random.default_rng(seed)
    params = {}
    for l in range(layers):
        pre = f"layer{l}."
        params[pre + "ln_p.gain"] = np.ones(p)
        params[pre + "ln_p.bias"] = np.zeros(p)
        params[pre + "patch.w1"] = _glorot(rng, p, hidden_p)
        params[pre + "patch.b1"] = np.zeros(hidden_p)
        params[pre + "patch.w2"] = _glorot(rng, hidden_p, p)
        params[pre + "patch.b2"] = np.zeros(p)
        params[pre + "ln_f.gain"] = np.ones(d)
        params[pre + "ln_f.bias"] = np.zeros(d)
        params[pre + "feat.w1"] = _glorot(rng, d, hidden_f)
        params[pre + "feat.b1"] = np.zeros(hidden_f)
        params[pre + "feat.w2"] = _glorot(rng, hidden_f, d)
        params[pre + "feat.b2"] = np.zeros(d)
    d_agg = p * d if aggregation == "flatten" else d
    params["head.w1"] = _glorot(rng, d_agg, hidden)
    params["head.b1"] = np.zeros(hidden)
    params["head.w2"] = _glorot(rng, hidden, num_classes)
    params["head.b2"] = np.zeros(num_classes)
    return MixerModel(params, p, d, num_classes, layers, hidden, hidden_p, hidden_f,
                      float(dropout), activation, bool(residual), aggregation, float(ln_eps), int(seed),
                      bool(soft_weights))


# ---------------------------------------------------------------------------
# mixing blocks (usable standalone on one patch or a batch)
# ---------------------------------------------------------------------------

def patch_mixing(P, lp: dict, activation: str = "gelu", eps: float = 1e-5):
    """Mix along the patch axis: MLP(LN(P^T))^T for P of shape (..., p, d)."""
    P = np.asarray(P, dtype=np.float64)
    if P.shape[-2] != lp["patch.w1"].shape[0]:
        raise ShapeError(f"patch axis {P.shape[-2]} != {lp['patch.w1'].shape[0]}")
    y, _ = _patch_forward(P, lp, activation, eps)
    return y


def feature_mixing(P, lp: dict, activation: str = "gelu", eps: float = 1e-5):
    """Mix along the feature axis: MLP(LN(P)) for P of shape (..., p, d)."""
    P = np.asarray(P, dtype=np.float64)
    if P.shape[-1] != lp["feat.w1"].shape[0]:
        raise ShapeError(f"feature axis {P.shape[-1]} != {lp['feat.w1'].shape[0]}")
    y, _ = _feature_forward(P, lp, activation, eps)
    return y


def _patch_forward(P, lp, act, eps):
    xt = np.swapaxes(P, -1, -2)
    z, ln_cache = _ln_forward(xt, lp["ln_p.gain"], lp["ln_p.bias"], eps)
    o, mlp_cache = _mlp_forward(z, lp["patch.w1"], lp["patch.b1"], lp["patch.w2"], lp["patch.b2"], act)
    return np.swapaxes(o, -1, -2), (ln_cache, mlp_cache)


def _patch_backward(dy, cache, lp, act):
    ln_cache, mlp_cache = cache
    do = np.swapaxes(dy, -1, -2)
    dz, dw1, db1, dw2, db2 = _mlp_backward(do, mlp_cache, lp["patch.w1"], lp["patch.w2"], act)
    dxt, dg, db = _ln_backward(dz, ln_cache)
    grads = {"ln_p.gain": dg, "ln_p.bias": db, "patch.w1": dw1, "patch.b1": db1,
             "patch.w2": dw2, "patch.b2": db2}
    return np.swapaxes(dxt, -1, -2), grads


def _feature_forward(P, lp, act, eps):
    z, ln_cache = _ln_forward(P, lp["ln_f.gain"], lp["ln_f.bias"], eps)
    o, mlp_cache = _mlp_forward(z, lp["feat.w1"], lp["feat.b1"], lp["feat.w2"], lp["feat.b2"], act)
    return o, (ln_cache, mlp_cache)


def _feature_backward(dy, cache, lp, act):
    ln_cache, mlp_cache = cache
    dz, dw1, db1, dw2, db2 = _mlp_backward(dy, mlp_cache, lp["feat.w1"], lp["feat.w2"], act)
    dx, dg, db = _ln_backward(dz, ln_cache)
    grads = {"ln_f.gain": dg, "ln_f.bias": db, "feat.w1": dw1, "feat.b1": db1,
             "feat.w2": dw2, "feat.b2": db2}
    return dx, grads


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ForwardTape:
    model: MixerModel
    version: int
    input_shape: tuple
    seed: int | None
    train_mode: bool
    layers: list = field(default_factory=list)
    head: tuple | None = None


def _dropout_mask(rng, shape, rate):
    return (rng.random(shape) >= rate) / (1.0 - rate)


def mixer_forward(P, model: MixerModel, train_mode: bool = False, seed: int | None = 0):
    """Logits (n, C) and the tape needed by :func:`mixer_backward`.

    Dropout masks are drawn from ``default_rng(seed)`` in the fixed order
    of the layers, so equal seeds give bitwise-equal outputs.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 3 or P.shape[1:] != (model.p, model.d):
        raise ShapeError(f"patch tensor must be (n, {model.p}, {model.d}), got {P.shape}")
    act, eps = model.activation, model.ln_eps
    use_drop = train_mode and model.dropout > 0.0
    rng = np.random.default_rng(seed) if use_drop else None
    tape = ForwardTape(model, model.version, P.shape, seed, train_mode)
    x = P
    for l in range(model.layers):
        lp = model.layer(l)
        y, pc = _patch_forward(x, lp, act, eps)
        pm = _dropout_mask(rng, y.shape, model.dropout) if use_drop else None
        if pm is not None:
            y = y * pm
        x1 = x + y if model.residual else y
        y2, fc = _feature_forward(x1, lp, act, eps)
        fm = _dropout_mask(rng, y2.shape, model.dropout) if use_drop else None
        if fm is not None:
            y2 = y2 * fm
        x = x1 + y2 if model.residual else y2
        tape.layers.append((pc, pm, fc, fm))

    n = x.shape[0]
    if model.aggregation == "mean":
        agg = x.mean(axis=1)
    elif model.aggregation == "sum":
        agg = x.sum(axis=1)
    else:
        agg = x.reshape(n, -1)
    prm = model.params
    logits, hc = _mlp_forward(agg, prm["head.w1"], prm["head.b1"], prm["head.w2"], prm["head.b2"], act)
    tape.head = (hc, x.shape)
    return logits, tape


def mixer_backward(tape: ForwardTape, dlogits):
    """Exact parameter gradients and the gradient w.r.t. the patch input.

    Returns (grads: dict name -> array, dP: (n, p, d)).
    """
    model = tape.model
    if tape.version != model.version:
        raise StateError("tape was recorded before the latest parameter update")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (tape.input_shape[0], model.num_classes):
        raise ShapeError(f"upstream gradient has shape {dlogits.shape}")
    act, prm = model.activation, model.params
    grads = {}
    hc, xshape = tape.head
    dagg, dw1, db1, dw2, db2 = _mlp_backward(dlogits, hc, prm["head.w1"], prm["head.w2"], act)
    grads.update({"head.w1": dw1, "head.b1": db1, "head.w2": dw2, "head.b2": db2})
    if model.aggregation == "mean":
        dx = np.broadcast_to(dagg[:, None, :] / xshape[1], xshape).copy()
    elif model.aggregation == "sum":
        dx = np.broadcast_to(dagg[:, None, :], xshape).copy()
    else:
        dx = dagg.reshape(xshape)
    for l in reversed(range(model.layers)):
        lp = model.layer(l)
        pc, pm, fc, fm = tape.layers[l]
        dy2 = dx * fm if fm is not None else dx
        dx1, fg = _feature_backward(dy2, fc, lp, act)
        if model.residual:
            dx1 = dx1 + dx
        dy = dx1 * pm if pm is not None else dx1
        dx, pg = _patch_backward(dy, pc, lp, act)
        if model.residual:
            dx = dx + dx1
        pre = f"layer{l}."
        for k, v in {**pg, **fg}.items():
            grads[pre + k] = v
    return {k: grads[k] for k in prm}, dx


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def _mask_index(mask, n):
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.int64).reshape(-1)
    if idx.size == 0:
        raise DegenerateError("empty evaluation mask")
    return idx


def cross_entropy(logits, labels, mask):
    """Mean softmax cross-entropy over ``mask`` and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    idx = _mask_index(mask, logits.shape[0])
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = labels[idx]
    loss = float(-logp[np.arange(idx.size), y].mean())
    prob = np.exp(logp)
    prob[np.arange(idx.size), y] -= 1.0
    grad = np.zeros_like(logits)
    np.add.at(grad, idx, prob / idx.size)
    return loss, grad


def accuracy(logits, labels, mask) -> float:
    """Argmax accuracy; ties resolve to the lowest class index."""
    logits = np.asarray(logits, dtype=np.float64)
    idx = _mask_index(mask, logits.shape[0])
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))
