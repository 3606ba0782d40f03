"""Layer specifications, shape inference, and per-layer forward/backward math.

Everything operates on NCHW float arrays. Layers hold no state; parameters
live on the owning model and are passed in explicitly, which keeps forward
a pure function and lets the gradient checker swap dtypes freely.
"""

from dataclasses import dataclass, field

import numpy as np

PARAMETRIC_KINDS = ("conv2d", "dense")

KINDS = ("conv2d", "maxpool2d", "relu", "dense", "upsample2d", "softmax", "concat")


class ShapeError(ValueError):
    """Layer stack does not compose; carries the offending layer index."""

    def __init__(self, layer_index, message):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential stack.

    kind is one of KINDS; params holds the kind-specific integers.
    ``concat`` references the output of an earlier layer by index and
    joins it along the channel axis (the skip connection primitive).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_json(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @staticmethod
    def from_json(obj):
        return LayerSpec(obj["kind"], dict(obj["params"]))


def conv2d(out_channels, kernel, stride=1, padding=None):
    if out_channels < 1 or kernel < 1 or stride < 1:
        raise ValueError("conv2d sizes must be >= 1")
    if padding is None:
        padding = kernel // 2
    return LayerSpec("conv2d", {"out_channels": out_channels, "kernel": kernel,
                                "stride": stride, "padding": padding})


def maxpool2d(size):
    if size < 1:
        raise ValueError("pool size must be >= 1")
    return LayerSpec("maxpool2d", {"size": size})


def relu():
    return LayerSpec("relu")


def dense(out_features):
    if out_features < 1:
        raise ValueError("dense width must be >= 1")
    return LayerSpec("dense", {"out_features": out_features})


def upsample2d(factor):
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    return LayerSpec("upsample2d", {"factor": factor})


def softmax():
    return LayerSpec("softmax")


def concat(source):
    if source < 0:
        raise ValueError("concat source must be a prior layer index")
    return LayerSpec("concat", {"source": source})


def infer_shapes(specs, input_shape):
    """Propagate (C, H, W) or (F,) shapes through a spec list.

    Returns the per-layer output shapes. Raises ShapeError where the stack
    fails to compose (bad pool divisibility, concat resolution mismatch,
    dense after dense, concat source out of range).
    """
    shapes = []
    cur = tuple(input_shape)
    for i, spec in enumerate(specs):
        kind, p = spec.kind, spec.params
        if kind == "conv2d":
            if len(cur) != 3:
                raise ShapeError(i, f"conv2d needs a C,H,W input, got {cur}")
            c, h, w = cur
            k, s, pad = p["kernel"], p["stride"], p["padding"]
            ho = (h + 2 * pad - k) // s + 1
            wo = (w + 2 * pad - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeError(i, f"conv2d kernel {k} does not fit input {h}x{w}")
            cur = (p["out_channels"], ho, wo)
        elif kind == "maxpool2d":
            if len(cur) != 3:
                raise ShapeError(i, f"maxpool2d needs a C,H,W input, got {cur}")
            c, h, w = cur
            sz = p["size"]
            if h % sz or w % sz:
                raise ShapeError(i, f"pool size {sz} does not divide {h}x{w}")
            cur = (c, h // sz, w // sz)
        elif kind == "relu":
            pass
        elif kind == "dense":
            cur = (p["out_features"],)
        elif kind == "upsample2d":
            if len(cur) != 3:
                raise ShapeError(i, f"upsample2d needs a C,H,W input, got {cur}")
            c, h, w = cur
            f = p["factor"]
            cur = (c, h * f, w * f)
        elif kind == "softmax":
            pass
        elif kind == "concat":
            src = p["source"]
            if src >= i:
                raise ShapeError(i, f"concat source {src} is not an earlier layer")
            other = shapes[src]
            if len(cur) != 3 or len(other) != 3 or cur[1:] != other[1:]:
                raise ShapeError(i, f"concat resolutions differ: {cur} vs {other}")
            cur = (cur[0] + other[0], cur[1], cur[2])
        shapes.append(cur)
    return shapes


def param_shapes(spec, in_shape):
    """Weight/bias array shapes for a parametric layer, () -> {} otherwise."""
    if spec.kind == "conv2d":
        cin = in_shape[0]
        k = spec.params["kernel"]
        co = spec.params["out_channels"]
        return {"W": (co, cin, k, k), "b": (co,)}
    if spec.kind == "dense":
        fin = int(np.prod(in_shape))
        return {"W": (fin, spec.params["out_features"]), "b": (spec.params["out_features"],)}
    return {}


def _conv_patches(x, k, stride, pad):
    # (N, C, H, W) -> (N, Ho, Wo, C*k*k) view-backed copy
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]            # (N, C, Ho, Wo, k, k)
    win = win.transpose(0, 2, 3, 1, 4, 5)          # (N, Ho, Wo, C, k, k)
    n, ho, wo = win.shape[:3]
    return np.ascontiguousarray(win).reshape(n, ho, wo, -1)


def conv2d_forward(x, W, b, stride, pad):
    co = W.shape[0]
    k = W.shape[2]
    patches = _conv_patches(x, k, stride, pad)
    n, ho, wo, _ = patches.shape
    y = patches.reshape(n * ho * wo, -1) @ W.reshape(co, -1).T
    y += b
    return y.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)


def conv2d_backward(x, W, dy, stride, pad):
    n, co, ho, wo = dy.shape
    cin = x.shape[1]
    k = W.shape[2]
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, co)
    patches = _conv_patches(x, k, stride, pad).reshape(n * ho * wo, -1)
    dW = (dy_mat.T @ patches).reshape(W.shape)
    db = dy.sum(axis=(0, 2, 3), dtype=np.float64).astype(dy.dtype)
    # scatter columns back into the (padded) input gradient
    dcols = (dy_mat @ W.reshape(co, -1)).reshape(n, ho, wo, cin, k, k)
    hp, wp = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad
    dxp = np.zeros((n, cin, hp, wp), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dW, db


def maxpool2d_forward(x, size):
    n, c, h, w = x.shape
    xr = x.reshape(n, c, h // size, size, w // size, size)
    return xr.max(axis=(3, 5))


def maxpool2d_backward(x, dy, size):
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    flat = x.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, ho, wo, size * size)
    arg = flat.argmax(axis=-1)                     # first max wins ties
    dflat = np.zeros_like(flat)
    np.put_along_axis(dflat, arg[..., None], dy[..., None], axis=-1)
    return dflat.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5) \
                .reshape(n, c, h, w)


def upsample2d_forward(x, factor):
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample2d_backward(dy, factor):
    n, c, h, w = dy.shape
    s = dy.reshape(n, c, h // factor, factor, w // factor, factor) \
          .sum(axis=(3, 5), dtype=np.float64)
    return s.astype(dy.dtype)


def softmax_forward(x):
    axis = 1 if x.ndim == 4 else -1
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, dy):
    axis = 1 if y.ndim == 4 else -1
    dot = (dy * y).sum(axis=axis, keepdims=True)
    return y * (dy - dot)
