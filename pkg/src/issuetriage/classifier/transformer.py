"""Toy transformer encoder with hand-derived backprop, numpy only.

Token embeddings + sinusoidal positions feed a stack of post-norm
blocks (masked multi-head self-attention -> add&norm -> feed-forward
-> add&norm); the unmasked positions are mean-pooled into a single
vector for the affine head. All math runs in float64; `backward_batch`
returns exact analytic gradients for every parameter.
"""

from __future__ import annotations

import numpy as np

from .config import EncoderConfig

LN_EPS = 1e-5
_MASK_NEG = -1e30


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Classic fixed position encodings, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    j = np.arange(dim, dtype=np.float64)[None, :]
    div = np.power(10000.0, 2.0 * np.floor(j / 2.0) / dim)
    angles = pos / div
    enc = np.where(j % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


def init_weights(vocab_size: int, cfg: EncoderConfig, num_outputs: int,
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, f = cfg.hidden_dim, cfg.ff_dim

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    w: dict[str, np.ndarray] = {}
    w["embed"] = rng.uniform(-0.05, 0.05, size=(vocab_size, d))
    for layer in range(cfg.layers):
        p = f"L{layer}."
        for name in ("wq", "wk", "wv", "wo"):
            w[p + "attn." + name] = glorot(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            w[p + "attn." + name] = np.zeros(d)
        w[p + "ln1.g"] = np.ones(d)
        w[p + "ln1.b"] = np.zeros(d)
        w[p + "ff.w1"] = glorot(d, f)
        w[p + "ff.b1"] = np.zeros(f)
        w[p + "ff.w2"] = glorot(f, d)
        w[p + "ff.b2"] = np.zeros(d)
        w[p + "ln2.g"] = np.ones(d)
        w[p + "ln2.b"] = np.zeros(d)
    w["w_out"] = glorot(d, num_outputs)
    w["b_out"] = np.zeros(num_outputs)
    return {k: v.astype(np.float32) for k, v in w.items()}


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def masked_softmax(scores: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with hard zeros on masked keys.

    `scores` is (B, H, T, T); `key_mask` is (B, T) with 1.0 on real
    tokens. Rows whose keys are all masked come back as all-zero.
    """
    keep = key_mask[:, None, None, :]
    shifted = scores + (1.0 - keep) * _MASK_NEG
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * keep
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.maximum(denom, 1e-30)


def _layernorm(z: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = z.mean(axis=-1, keepdims=True)
    centered = z - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * istd
    return gain * xhat + bias, {"xhat": xhat, "istd": istd, "gain": gain}


def _layernorm_backward(dy: np.ndarray, cache: dict):
    xhat, istd, gain = cache["xhat"], cache["istd"], cache["gain"]
    d = xhat.shape[-1]
    dgain = (dy * xhat).sum(axis=(0, 1))
    dbias = dy.sum(axis=(0, 1))
    dxhat = dy * gain
    dz = (istd / d) * (d * dxhat
                       - dxhat.sum(axis=-1, keepdims=True)
                       - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dz, dgain, dbias


def _dropout_scale(shape, p: float, rng: np.random.Generator | None):
    """Inverted-dropout multiplier, or None when inactive."""
    if p <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)


def forward_batch(params: dict[str, np.ndarray], cfg: EncoderConfig,
                  ids: np.ndarray, mask: np.ndarray, *,
                  dropout_rng: np.random.Generator | None = None):
    """Run the encoder on a batch; returns (logits, cache).

    `ids` is (B, T) int, `mask` (B, T) float 0/1. Dropout fires only
    when a generator is supplied (training); inference is
    deterministic.
    """
    h_count, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    b, t = ids.shape

    x = params["embed"][ids] + sinusoidal_positions(t, cfg.hidden_dim)
    layers = []
    for layer in range(cfg.layers):
        p = f"L{layer}."
        x_in = x
        q = _split_heads(x_in @ params[p + "attn.wq"] + params[p + "attn.bq"], h_count)
        k = _split_heads(x_in @ params[p + "attn.wk"] + params[p + "attn.bk"], h_count)
        v = _split_heads(x_in @ params[p + "attn.wv"] + params[p + "attn.bv"], h_count)
        scores = (q @ k.swapaxes(-1, -2)) * scale
        attn = masked_softmax(scores, mask)
        ctx = _merge_heads(attn @ v)
        proj = ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]
        drop1 = _dropout_scale(proj.shape, cfg.dropout, dropout_rng)
        if drop1 is not None:
            proj = proj * drop1
        x1, ln1 = _layernorm(x_in + proj, params[p + "ln1.g"], params[p + "ln1.b"])
        hidden = np.maximum(x1 @ params[p + "ff.w1"] + params[p + "ff.b1"], 0.0)
        ffo = hidden @ params[p + "ff.w2"] + params[p + "ff.b2"]
        drop2 = _dropout_scale(ffo.shape, cfg.dropout, dropout_rng)
        if drop2 is not None:
            ffo = ffo * drop2
        x2, ln2 = _layernorm(x1 + ffo, params[p + "ln2.g"], params[p + "ln2.b"])
        layers.append({"x_in": x_in, "q": q, "k": k, "v": v, "attn": attn,
                       "ctx": ctx, "drop1": drop1, "ln1": ln1, "x1": x1,
                       "hidden": hidden, "drop2": drop2, "ln2": ln2})
        x = x2

    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    pooled = (x * mask[:, :, None]).sum(axis=1) / counts
    logits = pooled @ params["w_out"] + params["b_out"]
    cache = {"ids": ids, "mask": mask, "counts": counts, "pooled": pooled,
             "layers": layers, "scale": scale}
    return logits, cache


def backward_batch(params: dict[str, np.ndarray], cfg: EncoderConfig,
                   cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with dL/dlogits = `dlogits`."""
    mask, counts = cache["mask"], cache["counts"]
    grads = {name: np.zeros_like(arr, dtype=np.float64)
             for name, arr in params.items()}

    grads["w_out"] += cache["pooled"].T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    dpooled = dlogits @ params["w_out"].T
    dx = dpooled[:, None, :] * (mask / counts)[:, :, None]

    for layer in reversed(range(cfg.layers)):
        p = f"L{layer}."
        c = cache["layers"][layer]
        d_model = cfg.hidden_dim

        dsum2, dg2, db2 = _layernorm_backward(dx, c["ln2"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dx1 = dsum2.copy()
        dffo = dsum2 if c["drop2"] is None else dsum2 * c["drop2"]

        flat_h = c["hidden"].reshape(-1, cfg.ff_dim)
        flat_dffo = dffo.reshape(-1, d_model)
        grads[p + "ff.w2"] += flat_h.T @ flat_dffo
        grads[p + "ff.b2"] += flat_dffo.sum(axis=0)
        dhidden = dffo @ params[p + "ff.w2"].T
        dpre = dhidden * (c["hidden"] > 0.0)
        flat_x1 = c["x1"].reshape(-1, d_model)
        flat_dpre = dpre.reshape(-1, cfg.ff_dim)
        grads[p + "ff.w1"] += flat_x1.T @ flat_dpre
        grads[p + "ff.b1"] += flat_dpre.sum(axis=0)
        dx1 += dpre @ params[p + "ff.w1"].T

        dsum1, dg1, db1 = _layernorm_backward(dx1, c["ln1"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dx_in = dsum1.copy()
        dproj = dsum1 if c["drop1"] is None else dsum1 * c["drop1"]

        flat_ctx = c["ctx"].reshape(-1, d_model)
        flat_dproj = dproj.reshape(-1, d_model)
        grads[p + "attn.wo"] += flat_ctx.T @ flat_dproj
        grads[p + "attn.bo"] += flat_dproj.sum(axis=0)
        dctx = _split_heads(dproj @ params[p + "attn.wo"].T, cfg.heads)

        attn, q, k, v = c["attn"], c["q"], c["k"], c["v"]
        dattn = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * cache["scale"]
        dk = (dscores.swapaxes(-1, -2) @ q) * cache["scale"]

        x_in = c["x_in"]
        flat_x_in = x_in.reshape(-1, d_model)
        for name, dhead in (("q", dq), ("k", dk), ("v", dv)):
            dmerged = _merge_heads(dhead)
            flat_d = dmerged.reshape(-1, d_model)
            grads[p + f"attn.w{name}"] += flat_x_in.T @ flat_d
            grads[p + f"attn.b{name}"] += flat_d.sum(axis=0)
            dx_in += dmerged @ params[p + f"attn.w{name}"].T

        dx = dx_in

    flat_ids = cache["ids"].reshape(-1)
    np.add.at(grads["embed"], flat_ids, dx.reshape(-1, cfg.hidden_dim))
    return grads
