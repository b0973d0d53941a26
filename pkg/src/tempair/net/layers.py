"""Layers with hand-written reverse-mode (vector-Jacobian) passes.

Feature maps carry a leading batch axis.  Plain maps are ``(N, C, H, W)``,
group-indexed maps are ``(N, C, G, H, W)`` and vectors are ``(N, D)``.
Each layer exposes ``forward(params, x) -> (out, cache)`` and
``backward(params, cache, grad_out) -> (grad_x, grad_params)`` where
``params`` is the list of arrays named by ``param_shapes``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import InvalidArgumentError
from .groups import GROUP_ORDERS, cayley_table, group_elements, inverse_indices, transform_spatial

PADDING_MODES = ("circular", "zeros", "valid")


def _check_padding(padding):
    if padding not in PADDING_MODES:
        raise InvalidArgumentError(f"padding must be one of {PADDING_MODES}, got {padding!r}")


def _pad(x, p, mode):
    if p == 0 or mode == "valid":
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, widths, mode="wrap" if mode == "circular" else "constant")


def _unpad(gp, p, mode, h, w):
    if p == 0 or mode == "valid":
        return gp
    if mode != "circular":
        return gp[..., p:p + h, p:p + w].copy()
    # wrapped border rows, then columns, fold back onto the opposite edge
    g = gp[..., p:p + h, :].copy()
    g[..., h - p:, :] += gp[..., :p, :]
    g[..., :p, :] += gp[..., p + h:, :]
    out = g[..., p:p + w].copy()
    out[..., w - p:] += g[..., :p]
    out[..., :p] += g[..., p + w:]
    return out


def _out_size(n, k, stride, padding):
    p = 0 if padding == "valid" else k // 2
    return (n + 2 * p - k) // stride + 1


def correlate(x, w, stride, padding):
    """Batched 2-d cross-correlation ``(N, C, H, W) x (O, C, k, k)``.

    Returns ``(out, cache)``; ``out`` has shape ``(N, O, Ho, Wo)``.
    """
    k = w.shape[-1]
    p = 0 if padding == "valid" else k // 2
    xp = _pad(x, p, padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, xp.shape, win, p)


def correlate_backward(w, cache, gout, stride, padding):
    x_shape, xp_shape, win, p = cache
    k = w.shape[-1]
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))
    gwin = np.tensordot(gout, w, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
    ho, wo = gout.shape[2:]
    gxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gwin[..., i, j].transpose(0, 3, 1, 2)
    gx = _unpad(gxp, p, padding, x_shape[2], x_shape[3])
    return gx, gw


class Layer:
    kind = "layer"
    group = None

    def param_shapes(self, in_shape):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def config(self):
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.config() == other.config()

    def __hash__(self):
        return hash(tuple(sorted(self.config().items())))


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, bias=True):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.bias = bool(bias)

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features, "bias": self.bias}

    def param_shapes(self, in_shape):
        shapes = [("weight", (self.out_features, self.in_features))]
        if self.bias:
            shapes.append(("bias", (self.out_features,)))
        return shapes

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise InvalidArgumentError(f"dense expects {self.in_features} inputs, got shape {in_shape}")
        return (self.out_features,)

    def forward(self, params, x):
        flat = x.reshape(x.shape[0], -1)
        out = flat @ params[0].T
        if self.bias:
            out = out + params[1]
        return out, (x.shape, flat)

    def backward(self, params, cache, gout):
        shape, flat = cache
        grads = [gout.T @ flat]
        if self.bias:
            grads.append(gout.sum(axis=0))
        return (gout @ params[0]).reshape(shape), grads


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding="circular", bias=True):
        _check_padding(padding)
        if kernel_size % 2 != 1:
            raise InvalidArgumentError("kernel_size must be odd")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = padding
        self.bias = bool(bias)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding,
                "bias": self.bias}

    def param_shapes(self, in_shape):
        k = self.kernel_size
        shapes = [("weight", (self.out_channels, self.in_channels, k, k))]
        if self.bias:
            shapes.append(("bias", (self.out_channels,)))
        return shapes

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise InvalidArgumentError(f"conv2d expects ({self.in_channels}, H, W), got {in_shape}")
        h, w = (_out_size(n, self.kernel_size, self.stride, self.padding) for n in in_shape[1:])
        return (self.out_channels, h, w)

    def forward(self, params, x):
        out, cache = correlate(x, params[0], self.stride, self.padding)
        if self.bias:
            out += params[1][None, :, None, None]
        return out, cache

    def backward(self, params, cache, gout):
        gx, gw = correlate_backward(params[0], cache, gout, self.stride, self.padding)
        grads = [gw]
        if self.bias:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return gx, grads


class _GConvBase(Layer):
    """Group convolution realised as filter transformation + correlation.

    ``_index`` maps every entry of the expanded filter bank back to the
    stored weight, so the backward pass is a scatter-add (``bincount``).
    """

    group_input = False

    def __init__(self, in_channels, out_channels, kernel_size=3, group="p4m", stride=1,
                 padding="circular", bias=True):
        _check_padding(padding)
        if group not in GROUP_ORDERS:
            raise InvalidArgumentError(f"group must be one of {sorted(GROUP_ORDERS)}, got {group!r}")
        if kernel_size % 2 != 1:
            raise InvalidArgumentError("kernel_size must be odd")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.group = group
        self.stride = int(stride)
        self.padding = padding
        self.bias = bool(bias)
        self._index = self._build_index()

    @property
    def order(self):
        return GROUP_ORDERS[self.group]

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "group": self.group, "stride": self.stride,
                "padding": self.padding, "bias": self.bias}

    def _weight_shape(self):
        raise NotImplementedError

    def param_shapes(self, in_shape):
        shapes = [("weight", self._weight_shape())]
        if self.bias:
            shapes.append(("bias", (self.out_channels,)))
        return shapes

    def expanded_weight(self, weight):
        return weight.reshape(-1)[self._index]

    def forward(self, params, x):
        n = x.shape[0]
        if self.group_input:
            x = x.reshape(n, -1, *x.shape[-2:])
        wbig = self.expanded_weight(params[0])
        out, cache = correlate(x, wbig, self.stride, self.padding)
        out = out.reshape(n, self.out_channels, self.order, *out.shape[-2:])
        if self.bias:
            out += params[1][None, :, None, None, None]
        return out, (cache, wbig)

    def backward(self, params, cache, gout):
        conv_cache, wbig = cache
        n = gout.shape[0]
        g2 = gout.reshape(n, -1, *gout.shape[-2:])
        gx, gwbig = correlate_backward(wbig, conv_cache, g2, self.stride, self.padding)
        gw = np.bincount(self._index.ravel(), weights=gwbig.ravel(), minlength=params[0].size)
        grads = [gw.reshape(params[0].shape)]
        if self.bias:
            grads.append(gout.sum(axis=(0, 2, 3, 4)))
        if self.group_input:
            gx = gx.reshape(n, self.in_channels, self.order, *gx.shape[-2:])
        return gx, grads


class GConvLift(_GConvBase):
    """Lifting layer: plain image in, group-indexed map out."""

    kind = "gconv_lift"

    def _weight_shape(self):
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)

    def _build_index(self):
        base = np.arange(int(np.prod(self._weight_shape()))).reshape(self._weight_shape())
        big = np.stack([transform_spatial(base, h) for h in group_elements(self.group)], axis=1)
        k = self.kernel_size
        return np.ascontiguousarray(big.reshape(self.out_channels * self.order, self.in_channels, k, k))

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise InvalidArgumentError(f"gconv_lift expects ({self.in_channels}, H, W), got {in_shape}")
        h, w = (_out_size(n, self.kernel_size, self.stride, self.padding) for n in in_shape[1:])
        return (self.out_channels, self.order, h, w)


class GConvGG(_GConvBase):
    """Group-to-group layer: group-indexed map in and out."""

    kind = "gconv_gg"
    group_input = True

    def _weight_shape(self):
        k = self.kernel_size
        return (self.out_channels, self.in_channels, self.order, k, k)

    def _build_index(self):
        base = np.arange(int(np.prod(self._weight_shape()))).reshape(self._weight_shape())
        elems = group_elements(self.group)
        inv = inverse_indices(self.group)
        table = cayley_table(self.group)
        slices = []
        for hi, h in enumerate(elems):
            # filter for output element h at input element g' is h . W[h^-1 g']
            perm = [table[inv[hi], gi] for gi in range(len(elems))]
            slices.append(transform_spatial(base[:, :, perm], h))
        big = np.stack(slices, axis=1)
        k = self.kernel_size
        return np.ascontiguousarray(
            big.reshape(self.out_channels * self.order, self.in_channels * self.order, k, k)
        )

    def out_shape(self, in_shape):
        if len(in_shape) != 4 or in_shape[0] != self.in_channels or in_shape[1] != self.order:
            raise InvalidArgumentError(
                f"gconv_gg expects group-indexed input ({self.in_channels}, {self.order}, H, W), got {in_shape}"
            )
        h, w = (_out_size(n, self.kernel_size, self.stride, self.padding) for n in in_shape[2:])
        return (self.out_channels, self.order, h, w)


class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, gout):
        return gout * cache, []


class GroupSpatialGAP(Layer):
    """Average over every axis but batch and channel (group and space)."""

    kind = "group_spatial_gap"

    def out_shape(self, in_shape):
        if len(in_shape) < 2:
            raise InvalidArgumentError(f"group_spatial_gap needs a feature map, got {in_shape}")
        return (in_shape[0],)

    def forward(self, params, x):
        axes = tuple(range(2, x.ndim))
        return x.mean(axis=axes), x.shape

    def backward(self, params, cache, gout):
        shape = cache
        count = int(np.prod(shape[2:]))
        g = np.broadcast_to(gout.reshape(gout.shape + (1,) * (len(shape) - 2)), shape) / count
        return np.array(g), []


class Softmax(Layer):
    kind = "softmax"

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise InvalidArgumentError(f"softmax needs a vector input, got {in_shape}")
        return in_shape

    def forward(self, params, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, params, cache, gout):
        p = cache
        return p * (gout - (gout * p).sum(axis=1, keepdims=True)), []


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, GConvLift, GConvGG, ReLU, GroupSpatialGAP, Softmax)}


def layer_from_config(cfg):
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in LAYER_KINDS:
        raise InvalidArgumentError(f"unknown layer kind {kind!r}; expected one of {sorted(LAYER_KINDS)}")
    try:
        return LAYER_KINDS[kind](**cfg)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad arguments for layer {kind!r}: {exc}") from exc
