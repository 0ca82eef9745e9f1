"""Layers with exact hand-written backward passes.

Conventions: images are (B, H, W, C); sequences are (B, T, D); Dense and
LayerNorm act on the last axis. Each layer caches what its backward needs
during forward and accumulates parameter gradients into ``self.grads``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ATTN_MASK_BIAS = -1e9


@dataclass
class LayerSpec:
    """Declarative layer description used to assemble networks."""

    kind: str
    params: dict = field(default_factory=dict)


class Layer:
    """Base class; parameter-free layers leave params/grads empty."""

    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def zero_grads(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def _he_uniform(shape: tuple, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _xavier_uniform(shape: tuple, fan_in: int, fan_out: int, rng, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """2-D convolution with TF-style 'same' padding.

    Two execution paths: an im2col matmul when the column matrix fits a
    fixed memory budget (fast for wide images with few input channels),
    otherwise a sum of shifted matmuls over kernel offsets, which keeps
    memory flat.
    """

    kind = "conv2d"

    IM2COL_BUDGET_BYTES = 256 * 1024 * 1024

    def __init__(
        self,
        kernel: tuple[int, int],
        c_in: int,
        c_out: int,
        stride: int = 1,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.kh, self.kw = kernel
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        rng = rng or np.random.default_rng()
        fan_in = self.kh * self.kw * c_in
        self.params = {
            "W": _he_uniform((self.kh, self.kw, c_in, c_out), fan_in, rng, dtype),
            "b": np.zeros(c_out, dtype=dtype),
        }
        self.zero_grads()
        self._cache = None

    def _geometry(self, h: int, w: int):
        s = self.stride
        ho = -(-h // s)
        wo = -(-w // s)
        pad_h = max((ho - 1) * s + self.kh - h, 0)
        pad_w = max((wo - 1) * s + self.kw - w, 0)
        return ho, wo, (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)

    def out_shape(self, in_shape: tuple) -> tuple:
        h, w, _ = in_shape
        ho, wo, _, _ = self._geometry(h, w)
        return (ho, wo, self.c_out)

    def _im2col(self, xp: np.ndarray, ho: int, wo: int) -> np.ndarray:
        s = self.stride
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))
        win = win[:, ::s, ::s][:, :ho, :wo]  # (B, ho, wo, C, kh, kw)
        # match the (kh, kw, cin) flattening of the weight tensor
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
            xp.shape[0], ho, wo, self.kh * self.kw * self.c_in
        )

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        b, h, w, _ = x.shape
        ho, wo, (pt, pb), (pl, pr) = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        s = self.stride
        weight = self.params["W"]
        k = self.kh * self.kw * self.c_in
        if x.itemsize * b * ho * wo * k <= self.IM2COL_BUDGET_BYTES:
            cols = self._im2col(xp, ho, wo)
            out = cols.reshape(-1, k) @ weight.reshape(k, self.c_out)
            out = out.reshape(b, ho, wo, self.c_out) + self.params["b"]
            self._cache = ("im2col", cols, xp.shape, x.shape, (ho, wo, pt, pl))
            return out
        acc = np.zeros((b * ho * wo, self.c_out), dtype=x.dtype)
        for di in range(self.kh):
            for dj in range(self.kw):
                patch = xp[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s, :]
                acc += patch.reshape(-1, self.c_in) @ weight[di, dj]
        out = acc.reshape(b, ho, wo, self.c_out) + self.params["b"]
        self._cache = ("offsets", xp, None, x.shape, (ho, wo, pt, pl))
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        path, first, xp_shape, x_shape, (ho, wo, pt, pl) = self._cache
        b, h, w, _ = x_shape
        s = self.stride
        weight = self.params["W"]
        k = self.kh * self.kw * self.c_in
        dy_flat = dy.reshape(-1, self.c_out)
        self.grads["b"] += dy.sum(axis=(0, 1, 2))

        if path == "im2col":
            cols = first
            self.grads["W"] += (cols.reshape(-1, k).T @ dy_flat).reshape(weight.shape)
            dcols = (dy_flat @ weight.reshape(k, self.c_out).T).reshape(
                b, ho, wo, self.kh, self.kw, self.c_in
            )
            dxp = np.zeros(xp_shape, dtype=dy.dtype)
            for di in range(self.kh):
                for dj in range(self.kw):
                    rows = slice(di, di + (ho - 1) * s + 1, s)
                    cols_sl = slice(dj, dj + (wo - 1) * s + 1, s)
                    dxp[:, rows, cols_sl, :] += dcols[:, :, :, di, dj, :]
            return dxp[:, pt : pt + h, pl : pl + w, :]

        xp = first
        dxp = np.zeros_like(xp)
        for di in range(self.kh):
            for dj in range(self.kw):
                rows = slice(di, di + (ho - 1) * s + 1, s)
                cols_sl = slice(dj, dj + (wo - 1) * s + 1, s)
                patch = xp[:, rows, cols_sl, :].reshape(-1, self.c_in)
                self.grads["W"][di, dj] += patch.T @ dy_flat
                dxp[:, rows, cols_sl, :] += (dy_flat @ weight[di, dj].T).reshape(
                    b, ho, wo, self.c_in
                )
        return dxp[:, pt : pt + h, pl : pl + w, :]


class MaxPool2D(Layer):
    """Max pooling (valid), gradient routed to the first maximal element."""

    kind = "maxpool2d"

    def __init__(self, window: int = 2, stride: int = 2) -> None:
        super().__init__()
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be >= 1")
        self.window, self.stride = window, stride
        self._cache = None

    def out_shape(self, in_shape: tuple) -> tuple:
        h, w, c = in_shape
        return ((h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c)

    def _slices(self, x: np.ndarray, ho: int, wo: int):
        s = self.stride
        for di in range(self.window):
            for dj in range(self.window):
                yield x[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s, :]

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        _, h, w, _ = x.shape
        ho, wo, _ = self.out_shape((h, w, x.shape[3]))
        out = None
        for patch in self._slices(x, ho, wo):
            out = patch.copy() if out is None else np.maximum(out, patch)
        self._cache = (x, out, ho, wo)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, out, ho, wo = self._cache
        s = self.stride
        dx = np.zeros_like(x)
        taken = np.zeros_like(out, dtype=bool)
        for di in range(self.window):
            for dj in range(self.window):
                rows = slice(di, di + (ho - 1) * s + 1, s)
                cols = slice(dj, dj + (wo - 1) * s + 1, s)
                sel = (x[:, rows, cols, :] == out) & ~taken
                dx[:, rows, cols, :] += dy * sel
                taken |= sel
        return dx


class GlobalAvgPool(Layer):
    """Spatial mean: (B, H, W, C) -> (B, C)."""

    kind = "global_avg_pool"

    def __init__(self) -> None:
        super().__init__()
        self._shape = None

    def out_shape(self, in_shape: tuple) -> tuple:
        return (in_shape[2],)

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, h, w, c = self._shape
        return np.broadcast_to(dy[:, None, None, :], (b, h, w, c)) / (h * w)


class Dense(Layer):
    """Affine map on the last axis."""

    kind = "dense"

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator | None = None,
        init: str = "he",
        dtype=np.float32,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        if init == "he":
            w = _he_uniform((d_in, d_out), d_in, rng, dtype)
        else:
            w = _xavier_uniform((d_in, d_out), d_in, d_out, rng, dtype)
        self.d_in, self.d_out = d_in, d_out
        self.params = {"W": w, "b": np.zeros(d_out, dtype=dtype)}
        self.zero_grads()
        self._cache = None

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape[:-1] + (self.d_out,)

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        self.grads["W"] += x.reshape(-1, self.d_in).T @ dy.reshape(-1, self.d_out)
        self.grads["b"] += dy.reshape(-1, self.d_out).sum(axis=0)
        return dy @ self.params["W"].T


class ReLU(Layer):
    kind = "relu"

    def __init__(self) -> None:
        super().__init__()
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask


class Sigmoid(Layer):
    kind = "sigmoid"

    def __init__(self) -> None:
        super().__init__()
        self._y = None

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._y * (1.0 - self._y)


class Dropout(Layer):
    """Inverted dropout; active only in train mode (masks replayed from cache)."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not (0.0 <= rate < 1.0):
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        draws = rng.random(x.shape, dtype=np.float32)
        keep = (draws >= self.rate).astype(x.dtype)
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask


class LayerNorm(Layer):
    """Normalization over the last axis with learned gain and bias."""

    kind = "layer_norm"

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32) -> None:
        super().__init__()
        self.dim, self.eps = dim, eps
        self.params = {"gamma": np.ones(dim, dtype=dtype), "beta": np.zeros(dim, dtype=dtype)}
        self.zero_grads()
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        lead = tuple(range(dy.ndim - 1))
        self.grads["gamma"] += (dy * xhat).sum(axis=lead)
        self.grads["beta"] += dy.sum(axis=lead)
        dxhat = dy * self.params["gamma"]
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


def _softmax_last(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class MultiHeadAttention(Layer):
    """Self-attention over (B, T, D) with an additive key-validity mask."""

    kind = "multihead_attention"

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model, self.n_heads = d_model, n_heads
        self.d_head = d_model // n_heads
        rng = rng or np.random.default_rng()
        self.params = {}
        for name in ("Wq", "Wk", "Wv", "Wo"):
            self.params[name] = _xavier_uniform((d_model, d_model), d_model, d_model, rng, dtype)
            self.params[name.replace("W", "b")] = np.zeros(d_model, dtype=dtype)
        self.zero_grads()
        self._cache = None
        self.last_attention: np.ndarray | None = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, _, t, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, self.d_model)

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng=None,
        valid: np.ndarray | None = None,
    ) -> np.ndarray:
        p = self.params
        q, k, v = x @ p["Wq"] + p["bq"], x @ p["Wk"] + p["bk"], x @ p["Wv"] + p["bv"]
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / np.sqrt(self.d_head)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        if valid is not None:
            scores = scores + np.where(valid, 0.0, ATTN_MASK_BIAS)[:, None, None, :]
        attn = _softmax_last(scores)
        ctx = self._merge(attn @ vh)
        out = ctx @ p["Wo"] + p["bo"]
        self._cache = (x, qh, kh, vh, attn, ctx, scale)
        self.last_attention = attn
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, qh, kh, vh, attn, ctx, scale = self._cache
        p, g = self.params, self.grads
        flat = lambda a: a.reshape(-1, self.d_model)

        g["Wo"] += flat(ctx).T @ flat(dy)
        g["bo"] += flat(dy).sum(axis=0)
        dctx = self._split(dy @ p["Wo"].T)

        dattn = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dqh = (dscores @ kh) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale

        dx = np.zeros_like(x)
        for name, dproj in (("Wq", dqh), ("Wk", dkh), ("Wv", dvh)):
            d = self._merge(dproj)
            g[name] += flat(x).T @ flat(d)
            g[name.replace("W", "b")] += flat(d).sum(axis=0)
            dx += d @ p[name].T
        return dx


class FeedForward(Layer):
    """Transformer position-wise MLP: Dense -> ReLU -> Dense."""

    kind = "feed_forward"

    def __init__(
        self,
        d_model: int,
        d_hidden: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        self.lin1 = Dense(d_model, d_hidden, rng=rng, init="xavier", dtype=dtype)
        self.act = ReLU()
        self.lin2 = Dense(d_hidden, d_model, rng=rng, init="xavier", dtype=dtype)
        self._collect()

    def _collect(self) -> None:
        self.params = {}
        self.grads = {}
        for tag, sub in (("1", self.lin1), ("2", self.lin2)):
            for name in sub.params:
                self.params[f"{name}{tag}"] = sub.params[name]
                self.grads[f"{name}{tag}"] = sub.grads[name]

    def zero_grads(self) -> None:
        self.lin1.zero_grads()
        self.lin2.zero_grads()
        self._collect()

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = self.lin1.backward(self.act.backward(self.lin2.backward(dy)))
        self._collect()
        return dx


class TransformerBlock(Layer):
    """Pre-norm encoder block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    kind = "transformer_block"

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        d_ff: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, d_ff, rng=rng, dtype=dtype)
        self._collect()

    def _subs(self):
        return (("n1", self.norm1), ("at", self.attn), ("n2", self.norm2), ("ff", self.ffn))

    def _collect(self) -> None:
        self.params = {}
        self.grads = {}
        for tag, sub in self._subs():
            for name in sub.params:
                self.params[f"{tag}.{name}"] = sub.params[name]
                self.grads[f"{tag}.{name}"] = sub.grads[name]

    def zero_grads(self) -> None:
        for _, sub in self._subs():
            sub.zero_grads()
        self._collect()

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng=None,
        valid: np.ndarray | None = None,
    ) -> np.ndarray:
        h = x + self.attn.forward(self.norm1.forward(x), valid=valid)
        return h + self.ffn.forward(self.norm2.forward(h))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dh = dy + self.norm2.backward(self.ffn.backward(dy))
        dx = dh + self.norm1.backward(self.attn.backward(dh))
        self._collect()
        return dx


def build_layer(
    spec: LayerSpec,
    in_shape: tuple,
    rng: np.random.Generator,
    dtype=np.float32,
) -> Layer:
    """Instantiate one layer from its spec given the incoming feature shape."""
    kind, p = spec.kind, spec.params
    if kind == "conv2d":
        return Conv2D(
            kernel=p["kernel"],
            c_in=in_shape[-1],
            c_out=p["filters"],
            stride=p.get("stride", 1),
            rng=rng,
            dtype=dtype,
        )
    if kind == "maxpool2d":
        return MaxPool2D(window=p.get("window", 2), stride=p.get("stride", 2))
    if kind == "global_avg_pool":
        return GlobalAvgPool()
    if kind == "dense":
        return Dense(in_shape[-1], p["units"], rng=rng, init=p.get("init", "he"), dtype=dtype)
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "dropout":
        return Dropout(p["rate"])
    if kind == "layer_norm":
        return LayerNorm(in_shape[-1], dtype=dtype)
    if kind == "multihead_attention":
        return MultiHeadAttention(in_shape[-1], p["heads"], rng=rng, dtype=dtype)
    if kind == "feed_forward":
        return FeedForward(in_shape[-1], p["width"], rng=rng, dtype=dtype)
    raise ValueError(f"unknown layer kind {kind!r}")
