"""Noise-prediction network: scores attend to frame features.

Each scalar of the noisy score sequence is embedded and used as a query
token; projected frame features supply keys and values. Blocks are
post-norm: cross-attention -> add&norm -> feed-forward -> add&norm, with an
optional self-attention sub-block ahead of the cross-attention (off by
default). A zero-initialized linear head maps tokens back to per-frame
noise estimates, so a fresh network predicts exactly zero.

Forward and backward passes are plain float64 numpy. The backward pass is
hand-derived and checked against central finite differences in the test
suite; gradients are exact up to floating-point error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericError, ShapeError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN_EPS = 1e-6


@dataclass(frozen=True)
class PredictorConfig:
    """Architecture hyperparameters of the noise predictor."""

    d_feature: int
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    t_embed_dim: int = 0  # 0 means "same as d_model"
    seed: int = 0
    self_attention: bool = False
    use_positions: bool = True

    def __post_init__(self):
        if self.t_embed_dim == 0:
            object.__setattr__(self, "t_embed_dim", self.d_model)
        for name in ("d_feature", "d_model", "n_layers", "n_heads", "d_ff", "t_embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.t_embed_dim % 2 != 0:
            raise ConfigError(f"t_embed_dim must be even, got {self.t_embed_dim}")

    def to_dict(self) -> dict:
        return {
            "d_feature": self.d_feature,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "t_embed_dim": self.t_embed_dim,
            "seed": self.seed,
            "self_attention": self.self_attention,
            "use_positions": self.use_positions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        return cls(**d)


@dataclass
class PredictorParams:
    """Named parameter tensors; iteration order is the declaration order."""

    cfg: PredictorConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())


def param_shapes(cfg: PredictorConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declaration-ordered (name, shape) list; fixes the checkpoint layout."""
    d, ff, df, te = cfg.d_model, cfg.d_ff, cfg.d_feature, cfg.t_embed_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("score_proj_w", (1, d)),
        ("score_proj_b", (d,)),
        ("time_proj_w", (te, d)),
        ("time_proj_b", (d,)),
        ("feat_key_w", (df, d)),
        ("feat_key_b", (d,)),
        ("feat_val_w", (df, d)),
        ("feat_val_b", (d,)),
    ]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        if cfg.self_attention:
            for stem in ("sa_q", "sa_k", "sa_v", "sa_o"):
                shapes.append((p + stem + "_w", (d, d)))
                shapes.append((p + stem + "_b", (d,)))
            shapes.append((p + "ln0_g", (d,)))
            shapes.append((p + "ln0_b", (d,)))
        for stem in ("attn_q", "attn_k", "attn_v", "attn_o"):
            shapes.append((p + stem + "_w", (d, d)))
            shapes.append((p + stem + "_b", (d,)))
        shapes.append((p + "ln1_g", (d,)))
        shapes.append((p + "ln1_b", (d,)))
        shapes.append((p + "ffn_w1", (d, ff)))
        shapes.append((p + "ffn_b1", (ff,)))
        shapes.append((p + "ffn_w2", (ff, d)))
        shapes.append((p + "ffn_b2", (d,)))
        shapes.append((p + "ln2_g", (d,)))
        shapes.append((p + "ln2_b", (d,)))
    shapes.append(("head_w", (d, 1)))
    shapes.append(("head_b", (1,)))
    return shapes


def init_predictor(cfg: PredictorConfig) -> PredictorParams:
    """Deterministic initialization from cfg.seed.

    Weights are normal with std 1/sqrt(fan_in), biases zero, layer-norm
    gains one. The output head starts at exactly zero so an untrained
    network predicts the zero vector.
    """
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg):
        base = name.rsplit(".", 1)[-1]
        if base.startswith("head"):
            tensors[name] = np.zeros(shape)
        elif base.startswith("ln"):
            tensors[name] = np.ones(shape) if base.endswith("_g") else np.zeros(shape)
        elif base.endswith("_b") or base.startswith("ffn_b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    return PredictorParams(cfg=cfg, tensors=tensors)


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a step index with geometric frequencies."""
    if dim % 2 != 0:
        raise ConfigError(f"embedding dim must be even, got {dim}")
    if t < 0:
        raise ConfigError(f"step must be non-negative, got {t}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


def position_table(n: int, dim: int) -> np.ndarray:
    """Per-frame sinusoidal positions, one embedding row per frame index."""
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    args = np.arange(n, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    dh = d // n_heads
    return x.reshape(n, n_heads, dh).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int):
    qh = _split_heads(q, n_heads)
    kh = _split_heads(k, n_heads)
    vh = _split_heads(v, n_heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    logits = qh @ kh.transpose(0, 2, 1) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    expl = np.exp(logits)
    weights = expl / expl.sum(axis=-1, keepdims=True)
    ctx = weights @ vh
    return _merge_heads(ctx), (qh, kh, vh, weights, scale)


def _attention_backward(dctx: np.ndarray, cache, n_heads: int):
    qh, kh, vh, weights, scale = cache
    dctx_h = _split_heads(dctx, n_heads)
    dweights = dctx_h @ vh.transpose(0, 2, 1)
    dvh = weights.transpose(0, 2, 1) @ dctx_h
    dlogits = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dqh = dlogits @ kh * scale
    dkh = dlogits.transpose(0, 2, 1) @ qh * scale
    return _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)


def _forward(params: PredictorParams, x: np.ndarray, f: np.ndarray, t: int, need_cache: bool):
    cfg = params.cfg
    p = params.tensors
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("scores must be a 1-D vector")
    if f.ndim != 2 or f.shape[1] != cfg.d_feature:
        raise ShapeError(f"features must be (n, {cfg.d_feature}), got {f.shape}")
    n = x.size
    if f.shape[0] != n:
        raise ShapeError(f"{n} scores vs {f.shape[0]} feature rows")
    if t < 1:
        raise ConfigError(f"step must be >= 1, got {t}")
    if not np.isfinite(x).all() or not np.isfinite(f).all():
        raise NumericError("non-finite input to predict_noise")

    temb = timestep_embedding(t, cfg.t_embed_dim)
    tproj = temb @ p["time_proj_w"] + p["time_proj_b"]
    pos = position_table(n, cfg.d_model) if cfg.use_positions else 0.0

    h = x[:, None] @ p["score_proj_w"] + p["score_proj_b"] + tproj + pos
    fk = f @ p["feat_key_w"] + p["feat_key_b"] + pos
    fv = f @ p["feat_val_w"] + p["feat_val_b"] + pos

    cache = {"x": x, "f": f, "temb": temb, "fk": fk, "fv": fv, "layers": []}
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        lc: dict = {}
        if cfg.self_attention:
            lc["sa_in"] = h
            sq = h @ p[pre + "sa_q_w"] + p[pre + "sa_q_b"]
            sk = h @ p[pre + "sa_k_w"] + p[pre + "sa_k_b"]
            sv = h @ p[pre + "sa_v_w"] + p[pre + "sa_v_b"]
            sctx, sa_att = _attention(sq, sk, sv, cfg.n_heads)
            lc["sa_att"] = sa_att
            lc["sa_ctx"] = sctx
            sa_out = sctx @ p[pre + "sa_o_w"] + p[pre + "sa_o_b"]
            h, ln0c = _layernorm(h + sa_out, p[pre + "ln0_g"], p[pre + "ln0_b"])
            lc["ln0"] = ln0c
        lc["ca_in"] = h
        q = h @ p[pre + "attn_q_w"] + p[pre + "attn_q_b"]
        k = fk @ p[pre + "attn_k_w"] + p[pre + "attn_k_b"]
        v = fv @ p[pre + "attn_v_w"] + p[pre + "attn_v_b"]
        ctx, att = _attention(q, k, v, cfg.n_heads)
        lc["ca_att"] = att
        lc["ca_ctx"] = ctx
        attn_out = ctx @ p[pre + "attn_o_w"] + p[pre + "attn_o_b"]
        h, ln1c = _layernorm(h + attn_out, p[pre + "ln1_g"], p[pre + "ln1_b"])
        lc["ln1"] = ln1c
        lc["ff_in"] = h
        u = h @ p[pre + "ffn_w1"] + p[pre + "ffn_b1"]
        g = _gelu(u)
        lc["ff_u"] = u
        lc["ff_g"] = g
        ff = g @ p[pre + "ffn_w2"] + p[pre + "ffn_b2"]
        h, ln2c = _layernorm(h + ff, p[pre + "ln2_g"], p[pre + "ln2_b"])
        lc["ln2"] = ln2c
        if need_cache:
            cache["layers"].append(lc)
    cache["h_final"] = h
    eps_hat = (h @ p["head_w"] + p["head_b"])[:, 0]
    return eps_hat, cache if need_cache else None


def predict_noise(params: PredictorParams, x_t, f: np.ndarray, t: int) -> np.ndarray:
    """Per-frame noise estimate for a noisy score sequence at step ``t``.

    ``x_t`` may be a raw vector or anything with a ``values`` attribute.
    """
    values = getattr(x_t, "values", x_t)
    eps_hat, _ = _forward(params, values, f, t, need_cache=False)
    return eps_hat


def mse_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"eps shape {eps.shape} != eps_hat shape {eps_hat.shape}")
    diff = eps - eps_hat
    return float((diff * diff).mean())


def loss_and_gradients(
    params: PredictorParams, x_t, f: np.ndarray, t: int, eps: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact gradients for every parameter tensor."""
    cfg = params.cfg
    p = params.tensors
    values = getattr(x_t, "values", x_t)
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat, cache = _forward(params, values, f, t, need_cache=True)
    loss = mse_loss(eps, eps_hat)
    n = eps_hat.size

    grads = {name: np.zeros_like(tensor) for name, tensor in p.items()}
    d_eps = (2.0 / n) * (eps_hat - eps)

    h = cache["h_final"]
    grads["head_w"] = h.T @ d_eps[:, None]
    grads["head_b"] = np.array([d_eps.sum()])
    dh = d_eps[:, None] @ p["head_w"].T

    d_fk = np.zeros_like(cache["fk"])
    d_fv = np.zeros_like(cache["fv"])
    for i in range(cfg.n_layers - 1, -1, -1):
        pre = f"layers.{i}."
        lc = cache["layers"][i]

        dr, dg_, db_ = _layernorm_backward(dh, lc["ln2"], p[pre + "ln2_g"])
        grads[pre + "ln2_g"] = dg_
        grads[pre + "ln2_b"] = db_
        dh = dr.copy()
        dff = dr
        grads[pre + "ffn_w2"] = lc["ff_g"].T @ dff
        grads[pre + "ffn_b2"] = dff.sum(axis=0)
        dg = dff @ p[pre + "ffn_w2"].T
        du = dg * _gelu_grad(lc["ff_u"])
        grads[pre + "ffn_w1"] = lc["ff_in"].T @ du
        grads[pre + "ffn_b1"] = du.sum(axis=0)
        dh += du @ p[pre + "ffn_w1"].T

        dr, dg_, db_ = _layernorm_backward(dh, lc["ln1"], p[pre + "ln1_g"])
        grads[pre + "ln1_g"] = dg_
        grads[pre + "ln1_b"] = db_
        dh = dr.copy()
        dattn = dr
        grads[pre + "attn_o_w"] = lc["ca_ctx"].T @ dattn
        grads[pre + "attn_o_b"] = dattn.sum(axis=0)
        dctx = dattn @ p[pre + "attn_o_w"].T
        dq, dk, dv = _attention_backward(dctx, lc["ca_att"], cfg.n_heads)
        hin = lc["ca_in"]
        grads[pre + "attn_q_w"] = hin.T @ dq
        grads[pre + "attn_q_b"] = dq.sum(axis=0)
        grads[pre + "attn_k_w"] = cache["fk"].T @ dk
        grads[pre + "attn_k_b"] = dk.sum(axis=0)
        grads[pre + "attn_v_w"] = cache["fv"].T @ dv
        grads[pre + "attn_v_b"] = dv.sum(axis=0)
        dh += dq @ p[pre + "attn_q_w"].T
        d_fk += dk @ p[pre + "attn_k_w"].T
        d_fv += dv @ p[pre + "attn_v_w"].T

        if cfg.self_attention:
            dr, dg_, db_ = _layernorm_backward(dh, lc["ln0"], p[pre + "ln0_g"])
            grads[pre + "ln0_g"] = dg_
            grads[pre + "ln0_b"] = db_
            dh = dr.copy()
            dsa = dr
            grads[pre + "sa_o_w"] = lc["sa_ctx"].T @ dsa
            grads[pre + "sa_o_b"] = dsa.sum(axis=0)
            dsctx = dsa @ p[pre + "sa_o_w"].T
            dsq, dsk, dsv = _attention_backward(dsctx, lc["sa_att"], cfg.n_heads)
            sin_ = lc["sa_in"]
            grads[pre + "sa_q_w"] = sin_.T @ dsq
            grads[pre + "sa_q_b"] = dsq.sum(axis=0)
            grads[pre + "sa_k_w"] = sin_.T @ dsk
            grads[pre + "sa_k_b"] = dsk.sum(axis=0)
            grads[pre + "sa_v_w"] = sin_.T @ dsv
            grads[pre + "sa_v_b"] = dsv.sum(axis=0)
            dh += dsq @ p[pre + "sa_q_w"].T
            dh += dsk @ p[pre + "sa_k_w"].T
            dh += dsv @ p[pre + "sa_v_w"].T

    grads["feat_key_w"] = cache["f"].T @ d_fk
    grads["feat_key_b"] = d_fk.sum(axis=0)
    grads["feat_val_w"] = cache["f"].T @ d_fv
    grads["feat_val_b"] = d_fv.sum(axis=0)

    grads["score_proj_w"] = (cache["x"] @ dh)[None, :]
    grads["score_proj_b"] = dh.sum(axis=0)
    dtproj = dh.sum(axis=0)
    grads["time_proj_w"] = np.outer(cache["temb"], dtproj)
    grads["time_proj_b"] = dtproj

    for name, g_ in grads.items():
        if not np.isfinite(g_).all():
            raise NumericError(f"non-finite gradient in tensor {name}")
    return loss, grads


@dataclass
class Predictor:
    """Callable bundle of config and parameters for the sampling loop."""

    params: PredictorParams

    def __call__(self, values: np.ndarray, f: np.ndarray, t: int) -> np.ndarray:
        return predict_noise(self.params, values, f, t)


def clone_params(params: PredictorParams) -> PredictorParams:
    return PredictorParams(
        cfg=params.cfg, tensors={k: v.copy() for k, v in params.tensors.items()}
    )


def config_with_seed(cfg: PredictorConfig, seed: int) -> PredictorConfig:
    return replace(cfg, seed=seed)
