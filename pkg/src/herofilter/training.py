"""Adam, early stopping, the training loop and its evaluation helpers."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, NumericalError, ParamError, ShapeError
from .graph import Graph, normalize_adjacency
from .mixer import MixerModel, accuracy, cross_entropy, init_mixer, mixer_backward, mixer_forward
from .patcher import PatchSet, fast_patch, top_p_columns
from .spectral import (
    PolyFilter,
    band_filter,
    eigendecompose,
    gather_relevance,
    gather_relevance_grad,
    low_pass_reference,
    relevance_from_response,
    relevance_response,
    relevance_response_grad,
)

PATCHER_MODES = ("static", "spectral", "fast")
FILTER_KINDS = ("poly", "lowpass", "band")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    hidden: int = 64
    hidden_p: int | None = None
    hidden_f: int = 64
    dropout: float = 0.5
    layers: int = 2
    p: int = 8
    K: int = 2
    mode: str = "static"
    refresh_interval: int = 0
    seed: int = 0
    aggregation: str = "mean"
    activation: str = "gelu"
    residual: bool = False
    filter: str = "poly"
    filter_activation: str = "tanh"
    filter_init: float = 1.0
    shared_filter: bool = False
    band_lo: float = 0.0
    band_hi: float = 2.0
    c: float = 0.5
    neumann_K: int = 20
    normalization: str = "sym"
    eigensolver: str = "jacobi"

    def __post_init__(self):
        if not self.lr > 0:
            raise ParamError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParamError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ParamError("max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ParamError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.mode not in PATCHER_MODES:
            raise ParamError(f"unknown patcher mode {self.mode!r}")
        if self.filter not in FILTER_KINDS:
            raise ParamError(f"unknown filter kind {self.filter!r}")
        if self.refresh_interval < 0:
            raise ParamError("refresh_interval must be >= 0")
        if self.K < 1 or self.p < 1:
            raise ParamError("K and p must be >= 1")

    @property
    def adaptive(self) -> bool:
        """Whether filter weights are trained through soft patch weights."""
        return self.mode == "spectral" and self.refresh_interval > 0 and self.filter == "poly"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParamError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# optimizer and stopping rule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, wd: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One in-place Adam update with L2 weight decay folded into the gradient."""
    state.t += 1
    t = state.t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {theta.shape}")
        if wd:
            g = g + wd * theta
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return state


class EarlyStopping:
    """Track the best validation loss; signal a stop ``patience`` epochs after it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0

    def step(self, val_loss: float, epoch: int) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0
    test_acc: float = math.nan
    test_loss: float = math.nan
    wall_time: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss, "val_loss": self.val_loss, "val_acc": self.val_acc,
            "best_epoch": self.best_epoch, "epochs_run": self.epochs_run,
            "test_acc": self.test_acc, "test_loss": self.test_loss, "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# patch construction
# ---------------------------------------------------------------------------

@dataclass
class PatcherState:
    patches: PatchSet
    dec: object = None
    filter: PolyFilter | None = None


def _fixed_response(cfg: TrainConfig, lam):
    if cfg.filter == "lowpass":
        return low_pass_reference(lam)
    return band_filter(lam, cfg.band_lo, cfg.band_hi)


def build_patcher(g: Graph, cfg: TrainConfig, dec=None) -> PatcherState:
    """Run the configured patcher once."""
    if cfg.p > g.num_nodes:
        raise ParamError(f"patch size {cfg.p} exceeds n={g.num_nodes}")
    a = normalize_adjacency(g, cfg.normalization)
    if cfg.mode == "fast":
        return PatcherState(fast_patch(g, a, cfg.c, cfg.neumann_K, cfg.p))
    if dec is None:
        dec = eigendecompose(a, method=cfg.eigensolver)
    if cfg.filter == "poly":
        f = PolyFilter.constant(cfg.K, g.num_nodes, cfg.filter_init, shared=cfg.shared_filter,
                                activation=cfg.filter_activation)
        q = relevance_response(f, dec.eigenvalues)
    else:
        f = None
        q = _fixed_response(cfg, dec.eigenvalues)
    ps = top_p_columns(relevance_from_response(dec, q), cfg.p, mode="spectral")
    return PatcherState(ps, dec, f)


def refresh_patches(state: PatcherState, p: int) -> PatchSet:
    q = relevance_response(state.filter, state.dec.eigenvalues)
    return top_p_columns(relevance_from_response(state.dec, q), p, mode="spectral")


def soft_scores(state: PatcherState, ps: PatchSet) -> np.ndarray:
    q = relevance_response(state.filter, state.dec.eigenvalues)
    return gather_relevance(state.dec, q, ps.indices)


def patch_inputs(g: Graph, ps: PatchSet, soft: bool = False) -> np.ndarray:
    """(n, p, d) mixer input; rows scaled by ``ps.scores`` when ``soft``."""
    x = g.features[ps.indices]
    if soft:
        x = x * ps.scores[:, :, None]
    return x


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch)]).generate_state(1)[0])


def _split(g: Graph, name: str) -> np.ndarray:
    idx = g.splits.get(name)
    if idx is None or len(idx) == 0:
        raise DegenerateError(f"split '{name}' is empty")
    return idx


def evaluate(model: MixerModel, g: Graph, ps: PatchSet, split: str = "test"):
    """Eval-mode (loss, accuracy) on one split."""
    idx = _split(g, split)
    logits, _ = mixer_forward(patch_inputs(g, ps, model.soft_weights), model, train_mode=False)
    loss, _ = cross_entropy(logits, g.labels, idx)
    return loss, accuracy(logits, g.labels, idx)


def train(g: Graph, cfg: TrainConfig, dec=None, patch_transform=None):
    """Train a mixer with early stopping on validation loss.

    Returns (best model, report, patch set used by the best model). The
    model's ``soft_weights`` flag tells :func:`evaluate` to scale patch
    rows by the stored scores. ``patch_transform`` maps each freshly
    built PatchSet before use (the shuffled-order ablation hooks in here).
    """
    t0 = time.perf_counter()
    train_idx, val_idx = _split(g, "train"), _split(g, "val")
    has_test = len(g.splits.get("test", [])) > 0
    transform = patch_transform or (lambda ps: ps)

    state = build_patcher(g, cfg, dec)
    adaptive = cfg.adaptive
    ps = transform(state.patches)
    model = init_mixer(cfg.p, g.feature_dim, g.num_classes, cfg.layers, cfg.hidden, cfg.hidden_p,
                       cfg.hidden_f, cfg.dropout, cfg.activation, cfg.residual, cfg.aggregation,
                       seed=cfg.seed, soft_weights=adaptive)
    opt = AdamState()
    fopt = AdamState()
    stopper = EarlyStopping(cfg.patience)
    report = TrainReport()
    best = None

    for epoch in range(1, cfg.max_epochs + 1):
        if adaptive and epoch > 1 and (epoch - 1) % cfg.refresh_interval == 0:
            ps = transform(refresh_patches(state, cfg.p))
        if adaptive:
            ps = PatchSet(ps.indices, soft_scores(state, ps), ps.mode)
        x = patch_inputs(g, ps, adaptive)

        logits, tape = mixer_forward(x, model, train_mode=True, seed=_epoch_seed(cfg.seed, epoch))
        loss, dlogits = cross_entropy(logits, g.labels, train_idx)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        grads, dx = mixer_backward(tape, dlogits)
        if adaptive:
            ds = np.einsum("vjd,vjd->vj", dx, g.features[ps.indices])
            dq = gather_relevance_grad(state.dec, ps.indices, ds)
            fgrad = relevance_response_grad(state.filter, state.dec.eigenvalues, dq)
            adam_step({"w": state.filter.weights}, {"w": fgrad}, fopt, cfg.lr, cfg.weight_decay)
        adam_step(model.params, grads, opt, cfg.lr, cfg.weight_decay)
        model.touch()

        if adaptive:
            ps = PatchSet(ps.indices, soft_scores(state, ps), ps.mode)
        vlogits, _ = mixer_forward(patch_inputs(g, ps, adaptive), model, train_mode=False)
        vloss, _ = cross_entropy(vlogits, g.labels, val_idx)
        if not math.isfinite(vloss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(loss)
        report.val_loss.append(vloss)
        report.val_acc.append(accuracy(vlogits, g.labels, val_idx))

        improved = vloss < stopper.best
        stop = stopper.step(vloss, epoch)
        if improved:
            best = (model.copy(), PatchSet(ps.indices.copy(), ps.scores.copy(), ps.mode))
        if stop:
            break

    model, ps = best
    report.best_epoch = stopper.best_epoch
    if has_test:
        report.test_loss, report.test_acc = evaluate(model, g, ps, "test")
    report.wall_time = time.perf_counter() - t0
    return model, report, ps


def ranked_vs_random_ablation(g: Graph, cfg: TrainConfig, trials: int = 5, dec=None):
    """Mean test accuracy with ranked patches and with each row shuffled.

    Trial t trains with seed ``cfg.seed + t``; the shuffle uses the same
    seed, so the whole ablation is deterministic.
    """
    if trials < 1:
        raise ParamError("trials must be >= 1")
    if dec is None and cfg.mode != "fast":
        dec = eigendecompose(normalize_adjacency(g, cfg.normalization), method=cfg.eigensolver)
    ranked, shuffled = [], []
    for t in range(trials):
        c = dataclasses.replace(cfg, seed=cfg.seed + t)
        ranked.append(train(g, c, dec)[1].test_acc)
        shuffled.append(train(g, c, dec, patch_transform=lambda ps, s=c.seed: ps.shuffled(s))[1].test_acc)
    return float(np.mean(ranked)), float(np.mean(shuffled))
