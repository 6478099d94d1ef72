"""Attention classifier over clue embeddings, with hand-derived gradients.

Forward pass, for a batch of image query embeddings Q, feature embeddings
F, and the fixed clue matrix (one row per guidebook clue):

    A = batchnorm_attn(Q)
    Z = A @ attn_weight.T + attn_bias          # one logit per clue
    R = relu(Z)                                # optional, on by default
    S = sigmoid(R)                             # attention weights
    clue_summary = (1/n_clues) * sum_j S[:, j] * clue_matrix[j]
    U = concat(F, clue_summary)
    V = batchnorm_cls(U)
    class_logits = V @ cls_weight.T + cls_bias

Training minimizes (1 - alpha) * country_loss + alpha * attn_loss, where
country_loss is class-weighted softmax cross entropy and attn_loss is
binary cross entropy on R against clue pseudo-label targets with positive
terms upweighted.

With relu-then-sigmoid, attention weights always land in [0.5, 1); this is
kept verbatim and can be disabled via ``attn_relu=False`` for ablation.

Sums over the clue axis (clue summary, attention-loss mean) are computed
in value-sorted order so that permuting clue rows together with the
matching parameter rows and targets reproduces outputs bit for bit.

All compute is float64; checkpoints truncate tensors to float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import STREAM_INIT, make_rng

CHECKPOINT_MAGIC = b"G3CK"
CHECKPOINT_VERSION = 1

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

POS_WEIGHT_MIN = 1.0
POS_WEIGHT_MAX = 1000.0


def _sorted_sum(a: np.ndarray, axis: int) -> np.ndarray:
    """Sum along an axis in ascending value order.

    The result depends only on the multiset of addends, so reductions over
    the clue axis are invariant to clue permutations, bit for bit.
    """
    if a.shape[axis] == 0:
        return np.zeros(a.shape[:axis] + a.shape[axis + 1 :])
    return np.sort(a, axis=axis).sum(axis=axis)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def _require_finite(name: str, x: np.ndarray) -> None:
    if x.size and not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class ModelConfig:
    d_query: int
    d_feature: int
    d_clue: int
    n_clues: int
    n_classes: int
    attn_relu: bool = True
    summary_normalize: str = "count"  # or "sum_of_weights"

    def __post_init__(self):
        if self.summary_normalize not in ("count", "sum_of_weights"):
            raise ValueError(
                f"summary_normalize must be 'count' or 'sum_of_weights', "
                f"got {self.summary_normalize!r}"
            )
        if min(self.d_query, self.d_feature, self.n_classes) < 1:
            raise ValueError("dims and class count must be positive")
        if self.n_clues < 0 or self.d_clue < 0:
            raise ValueError("n_clues and d_clue must be >= 0")

    @property
    def fused_dim(self) -> int:
        return self.d_feature + (self.d_clue if self.n_clues else 0)

    def to_dict(self) -> dict:
        return {
            "d_query": self.d_query,
            "d_feature": self.d_feature,
            "d_clue": self.d_clue,
            "n_clues": self.n_clues,
            "n_classes": self.n_classes,
            "attn_relu": self.attn_relu,
            "summary_normalize": self.summary_normalize,
        }


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, dim: int) -> "BatchNormState":
        return cls(
            gamma=np.ones(dim),
            beta=np.zeros(dim),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
        )

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            eps=self.eps,
            momentum=self.momentum,
        )


@dataclass
class _BNCache:
    x_hat: np.ndarray
    inv_std: np.ndarray


def _bn_forward(
    state: BatchNormState, x: np.ndarray, train: bool
) -> tuple[np.ndarray, _BNCache | None]:
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = (x - mu) * inv_std
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var
        return state.gamma * x_hat + state.beta, _BNCache(x_hat, inv_std)
    x_hat = (x - state.running_mean) / np.sqrt(state.running_var + state.eps)
    return state.gamma * x_hat + state.beta, None


def _bn_backward(
    state: BatchNormState, cache: _BNCache, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_input, d_gamma, d_beta) for a train-mode forward."""
    b = d_out.shape[0]
    d_gamma = (d_out * cache.x_hat).sum(axis=0)
    d_beta = d_out.sum(axis=0)
    d_xhat = d_out * state.gamma
    d_x = (cache.inv_std / b) * (
        b * d_xhat
        - d_xhat.sum(axis=0)
        - cache.x_hat * (d_xhat * cache.x_hat).sum(axis=0)
    )
    return d_x, d_gamma, d_beta


@dataclass
class G3Params:
    config: ModelConfig
    attn_weight: np.ndarray  # (n_clues, d_query)
    attn_bias: np.ndarray  # (n_clues,)
    cls_weight: np.ndarray  # (n_classes, fused_dim)
    cls_bias: np.ndarray  # (n_classes,)
    bn_attn: BatchNormState
    bn_cls: BatchNormState

    TENSOR_NAMES = (
        "attn_weight",
        "attn_bias",
        "cls_weight",
        "cls_bias",
        "bn_attn.gamma",
        "bn_attn.beta",
        "bn_attn.running_mean",
        "bn_attn.running_var",
        "bn_cls.gamma",
        "bn_cls.beta",
        "bn_cls.running_mean",
        "bn_cls.running_var",
    )

    def tensor(self, name: str) -> np.ndarray:
        if "." in name:
            bn_name, attr = name.split(".")
            return getattr(getattr(self, bn_name), attr)
        return getattr(self, name)

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        if "." in name:
            bn_name, attr = name.split(".")
            setattr(getattr(self, bn_name), attr, value)
        else:
            setattr(self, name, value)

    def trainable_names(self) -> tuple[str, ...]:
        return (
            "attn_weight",
            "attn_bias",
            "cls_weight",
            "cls_bias",
            "bn_attn.gamma",
            "bn_attn.beta",
            "bn_cls.gamma",
            "bn_cls.beta",
        )

    def copy(self) -> "G3Params":
        return G3Params(
            config=self.config,
            attn_weight=self.attn_weight.copy(),
            attn_bias=self.attn_bias.copy(),
            cls_weight=self.cls_weight.copy(),
            cls_bias=self.cls_bias.copy(),
            bn_attn=self.bn_attn.copy(),
            bn_cls=self.bn_cls.copy(),
        )


def init_params(config: ModelConfig, seed: int = 0) -> G3Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    identity batch norms."""
    rng = make_rng(seed, STREAM_INIT)
    bound_attn = 1.0 / np.sqrt(config.d_query)
    attn_weight = rng.uniform(-bound_attn, bound_attn, (config.n_clues, config.d_query))
    bound_cls = 1.0 / np.sqrt(config.fused_dim)
    cls_weight = rng.uniform(-bound_cls, bound_cls, (config.n_classes, config.fused_dim))
    return G3Params(
        config=config,
        attn_weight=attn_weight,
        attn_bias=np.zeros(config.n_clues),
        cls_weight=cls_weight,
        cls_bias=np.zeros(config.n_classes),
        bn_attn=BatchNormState.identity(config.d_query),
        bn_cls=BatchNormState.identity(config.fused_dim),
    )


@dataclass
class ForwardTrace:
    mode: str
    query: np.ndarray
    feature: np.ndarray
    clue_matrix: np.ndarray
    attn_input: np.ndarray  # batch-normalized query
    pre_activation: np.ndarray  # Z, before the optional relu
    attn_logits: np.ndarray  # R, what the sigmoid and the BCE see
    attn_weights: np.ndarray  # S = sigmoid(R)
    clue_summary: np.ndarray
    fused_input: np.ndarray
    cls_input: np.ndarray  # batch-normalized fused input
    class_logits: np.ndarray
    weight_sum: np.ndarray | None = None  # per-sample, sum_of_weights mode
    bn_attn_cache: _BNCache | None = field(default=None, repr=False)
    bn_cls_cache: _BNCache | None = field(default=None, repr=False)


def forward(
    params: G3Params,
    query: np.ndarray,
    feature: np.ndarray,
    clue_matrix: np.ndarray | None,
    mode: str = "eval",
) -> ForwardTrace:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    feature = np.atleast_2d(np.asarray(feature, dtype=np.float64))
    if clue_matrix is None:
        clue_matrix = np.zeros((0, 0))
    clue_matrix = np.asarray(clue_matrix, dtype=np.float64)
    if query.shape[1] != cfg.d_query:
        raise ValueError(f"query dim {query.shape[1]} != {cfg.d_query}")
    if feature.shape[1] != cfg.d_feature:
        raise ValueError(f"feature dim {feature.shape[1]} != {cfg.d_feature}")
    if query.shape[0] != feature.shape[0]:
        raise ValueError("query and feature batch sizes differ")
    if clue_matrix.shape[0] != cfg.n_clues:
        raise ValueError(
            f"clue matrix has {clue_matrix.shape[0]} rows, config says {cfg.n_clues}"
        )
    if cfg.n_clues and clue_matrix.shape[1] != cfg.d_clue:
        raise ValueError(f"clue dim {clue_matrix.shape[1]} != {cfg.d_clue}")
    _require_finite("query", query)
    _require_finite("feature", feature)
    _require_finite("clue_matrix", clue_matrix)

    train = mode == "train"
    attn_input, bn_attn_cache = _bn_forward(params.bn_attn, query, train)
    z = attn_input @ params.attn_weight.T + params.attn_bias
    r = np.maximum(z, 0.0) if cfg.attn_relu else z
    s = _sigmoid(r)

    b = query.shape[0]
    weight_sum = None
    if cfg.n_clues:
        products = s[:, :, None] * clue_matrix[None, :, :]
        summed = _sorted_sum(products, axis=1)
        if cfg.summary_normalize == "count":
            clue_summary = summed / cfg.n_clues
        else:
            weight_sum = _sorted_sum(s, axis=1)
            clue_summary = summed / weight_sum[:, None]
    else:
        clue_summary = np.zeros((b, 0))

    fused = np.concatenate([feature, clue_summary], axis=1)
    cls_input, bn_cls_cache = _bn_forward(params.bn_cls, fused, train)
    class_logits = cls_input @ params.cls_weight.T + params.cls_bias

    return ForwardTrace(
        mode=mode,
        query=query,
        feature=feature,
        clue_matrix=clue_matrix,
        attn_input=attn_input,
        pre_activation=z,
        attn_logits=r,
        attn_weights=s,
        clue_summary=clue_summary,
        fused_input=fused,
        cls_input=cls_input,
        class_logits=class_logits,
        weight_sum=weight_sum,
        bn_attn_cache=bn_attn_cache,
        bn_cls_cache=bn_cls_cache,
    )


@dataclass
class LossConfig:
    alpha: float = 0.75
    pos_weight_mode: str | float = "auto"
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.pos_weight_mode != "auto":
            lam = float(self.pos_weight_mode)
            if lam <= 0:
                raise ValueError("fixed positive weight must be > 0")
            self.pos_weight_mode = lam


def pos_weights(targets: np.ndarray, mode: str | float = "auto") -> np.ndarray:
    """Per-sample upweight for positive clue terms.

    Auto mode uses the sample's negative/positive count ratio clamped to
    [1, 1000]; samples with no positives get 1 (the value is then unused).
    """
    targets = np.atleast_2d(targets)
    b, n = targets.shape
    if mode != "auto":
        return np.full(b, float(mode))
    pos = targets.sum(axis=1)
    lam = np.ones(b)
    has_pos = pos > 0
    lam[has_pos] = np.clip(
        (n - pos[has_pos]) / pos[has_pos], POS_WEIGHT_MIN, POS_WEIGHT_MAX
    )
    return lam


def country_loss(
    class_logits: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray | None = None,
) -> float:
    """Class-weighted softmax cross entropy, averaged over the batch."""
    logits = np.atleast_2d(np.asarray(class_logits, dtype=np.float64))
    _require_finite("class_logits", logits)
    labels = np.atleast_1d(labels).astype(int)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label index out of range")
    w = (
        np.ones(logits.shape[1])
        if class_weights is None
        else np.asarray(class_weights, dtype=np.float64)
    )
    lse = _logsumexp(logits)
    picked = logits[np.arange(len(labels)), labels]
    return float(np.mean(w[labels] * (lse - picked)))


def attn_loss(
    attn_logits: np.ndarray,
    targets: np.ndarray,
    pos_weight: np.ndarray | float = 1.0,
) -> float:
    """Binary cross entropy with logits over clues, positives upweighted.

    Per sample the loss is the mean over clues; the batch value is the
    mean over samples. Computed in the numerically stable softplus form.
    """
    r = np.atleast_2d(np.asarray(attn_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if r.shape != t.shape:
        raise ValueError(f"logits shape {r.shape} != targets shape {t.shape}")
    if r.shape[1] == 0:
        return 0.0
    _require_finite("attn_logits", r)
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("targets must be binary")
    lam = np.broadcast_to(np.asarray(pos_weight, dtype=np.float64), (r.shape[0],))
    terms = lam[:, None] * t * _softplus(-r) + (1.0 - t) * _softplus(r)
    per_sample = _sorted_sum(terms, axis=1) / r.shape[1]
    return float(per_sample.mean())


def composite_loss(country: float, attn: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return (1.0 - alpha) * country + alpha * attn


@dataclass
class Gradients:
    attn_weight: np.ndarray
    attn_bias: np.ndarray
    cls_weight: np.ndarray
    cls_bias: np.ndarray
    bn_attn_gamma: np.ndarray
    bn_attn_beta: np.ndarray
    bn_cls_gamma: np.ndarray
    bn_cls_beta: np.ndarray

    def by_name(self) -> dict[str, np.ndarray]:
        return {
            "attn_weight": self.attn_weight,
            "attn_bias": self.attn_bias,
            "cls_weight": self.cls_weight,
            "cls_bias": self.cls_bias,
            "bn_attn.gamma": self.bn_attn_gamma,
            "bn_attn.beta": self.bn_attn_beta,
            "bn_cls.gamma": self.bn_cls_gamma,
            "bn_cls.beta": self.bn_cls_beta,
        }

    def norm(self) -> float:
        return float(
            np.sqrt(sum(np.sum(g * g) for g in self.by_name().values()))
        )


def backward(
    params: G3Params,
    trace: ForwardTrace,
    labels: np.ndarray,
    targets: np.ndarray,
    loss_cfg: LossConfig,
) -> Gradients:
    """Gradients of the composite loss for every trainable tensor.

    Running batch-norm statistics were already updated by the forward pass
    and are not differentiated. The relu subgradient at exactly zero is 0.
    """
    if trace.mode != "train":
        raise ValueError("backward requires a train-mode trace")
    cfg = params.config
    b = trace.query.shape[0]
    labels = np.atleast_1d(labels).astype(int)
    alpha = loss_cfg.alpha

    w = (
        np.ones(cfg.n_classes)
        if loss_cfg.class_weights is None
        else np.asarray(loss_cfg.class_weights, dtype=np.float64)
    )
    logits = trace.class_logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    d_logits = probs.copy()
    d_logits[np.arange(b), labels] -= 1.0
    d_logits *= ((1.0 - alpha) / b) * w[labels][:, None]

    d_cls_weight = d_logits.T @ trace.cls_input
    d_cls_bias = d_logits.sum(axis=0)
    d_v = d_logits @ params.cls_weight
    d_fused, d_bn_cls_gamma, d_bn_cls_beta = _bn_backward(
        params.bn_cls, trace.bn_cls_cache, d_v
    )

    if cfg.n_clues:
        d_summary = d_fused[:, cfg.d_feature :]
        s = trace.attn_weights
        if cfg.summary_normalize == "count":
            d_s = (d_summary @ trace.clue_matrix.T) / cfg.n_clues
        else:
            dot = d_summary @ trace.clue_matrix.T
            corr = (d_summary * trace.clue_summary).sum(axis=1, keepdims=True)
            d_s = (dot - corr) / trace.weight_sum[:, None]

        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        lam = pos_weights(targets, loss_cfg.pos_weight_mode)
        d_r_attn = (alpha / (b * cfg.n_clues)) * (
            lam[:, None] * targets * (s - 1.0) + (1.0 - targets) * s
        )
        d_r = d_s * s * (1.0 - s) + d_r_attn
        d_z = d_r * (trace.pre_activation > 0) if cfg.attn_relu else d_r
        d_attn_weight = d_z.T @ trace.attn_input
        d_attn_bias = d_z.sum(axis=0)
        d_a = d_z @ params.attn_weight
    else:
        d_attn_weight = np.zeros_like(params.attn_weight)
        d_attn_bias = np.zeros_like(params.attn_bias)
        d_a = np.zeros_like(trace.attn_input)

    _, d_bn_attn_gamma, d_bn_attn_beta = _bn_backward(
        params.bn_attn, trace.bn_attn_cache, d_a
    )

    return Gradients(
        attn_weight=d_attn_weight,
        attn_bias=d_attn_bias,
        cls_weight=d_cls_weight,
        cls_bias=d_cls_bias,
        bn_attn_gamma=d_bn_attn_gamma,
        bn_attn_beta=d_bn_attn_beta,
        bn_cls_gamma=d_bn_cls_gamma,
        bn_cls_beta=d_bn_cls_beta,
    )


def batch_losses(
    trace: ForwardTrace,
    labels: np.ndarray,
    targets: np.ndarray,
    loss_cfg: LossConfig,
) -> tuple[float, float, float]:
    """(total, country, attn) for one forward trace."""
    c_loss = country_loss(trace.class_logits, labels, loss_cfg.class_weights)
    if trace.attn_logits.shape[1]:
        lam = pos_weights(
            np.atleast_2d(targets), loss_cfg.pos_weight_mode
        )
        a_loss = attn_loss(trace.attn_logits, targets, lam)
    else:
        a_loss = 0.0
    return composite_loss(c_loss, a_loss, loss_cfg.alpha), c_loss, a_loss


def save_checkpoint(
    params: G3Params,
    path: str | Path,
    alpha: float | None = None,
    seed: int | None = None,
    epoch: int | None = None,
) -> None:
    """Versioned binary: JSON header plus float32 little-endian tensors."""
    tensors = [(name, params.tensor(name)) for name in G3Params.TENSOR_NAMES]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "alpha": alpha,
        "seed": seed,
        "epoch": epoch,
        "bn": {"eps": BN_EPS, "momentum": BN_MOMENTUM},
        "tensors": [[name, list(t.shape)] for name, t in tensors],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.array([CHECKPOINT_VERSION, len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[G3Params, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    config = ModelConfig(**header["config"])
    offset = 12 + hlen
    values = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        values[name] = arr.astype(np.float64).reshape(shape)
        offset += 4 * count
    params = G3Params(
        config=config,
        attn_weight=values["attn_weight"],
        attn_bias=values["attn_bias"],
        cls_weight=values["cls_weight"],
        cls_bias=values["cls_bias"],
        bn_attn=BatchNormState(
            gamma=values["bn_attn.gamma"],
            beta=values["bn_attn.beta"],
            running_mean=values["bn_attn.running_mean"],
            running_var=values["bn_attn.running_var"],
            eps=header["bn"]["eps"],
            momentum=header["bn"]["momentum"],
        ),
        bn_cls=BatchNormState(
            gamma=values["bn_cls.gamma"],
            beta=values["bn_cls.beta"],
            running_mean=values["bn_cls.running_mean"],
            running_var=values["bn_cls.running_var"],
            eps=header["bn"]["eps"],
            momentum=header["bn"]["momentum"],
        ),
    )
    return params, header
