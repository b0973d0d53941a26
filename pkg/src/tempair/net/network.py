"""Network specs, flat parameter vectors, forward pass and loss gradients."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import InvalidArgumentError
from .layers import (
    Conv2d,
    Dense,
    GConvGG,
    GConvLift,
    GroupSpatialGAP,
    Layer,
    ReLU,
    Softmax,
    layer_from_config,
)


@dataclass(frozen=True)
class ParamSlot:
    layer: int
    name: str
    shape: tuple
    start: int
    stop: int


class NetworkSpec:
    """An ordered stack of layers with shape inference.

    ``task`` is ``"classification"`` (the last layer must be
    :class:`Softmax`) or ``"regression"`` (scalar output, Gaussian NLL with
    variance ``noise_var``).
    """

    def __init__(self, input_shape, layers, task="classification", noise_var=1.0):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = tuple(layers)
        self.task = task
        self.noise_var = float(noise_var)
        if task not in ("classification", "regression"):
            raise InvalidArgumentError(f"task must be 'classification' or 'regression', got {task!r}")
        if task == "classification" and (not self.layers or not isinstance(self.layers[-1], Softmax)):
            raise InvalidArgumentError("classification specs must end with a Softmax layer")
        if task == "regression" and self.noise_var <= 0:
            raise InvalidArgumentError("noise_var must be > 0")
        self.shapes = [self.input_shape]
        layout = []
        offset = 0
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, Layer):
                raise InvalidArgumentError(f"layer {i} is not a Layer: {layer!r}")
            in_shape = self.shapes[-1]
            try:
                out_shape = layer.out_shape(in_shape)
            except InvalidArgumentError as exc:
                raise InvalidArgumentError(f"layer {i} ({layer.kind}): {exc}") from None
            for name, shape in layer.param_shapes(in_shape):
                size = int(np.prod(shape))
                layout.append(ParamSlot(i, name, tuple(shape), offset, offset + size))
                offset += size
            self.shapes.append(tuple(out_shape))
        self.layout = tuple(layout)
        self.n_params = offset
        self._slots_by_layer = [[s for s in layout if s.layer == i] for i in range(len(self.layers))]

    @property
    def output_shape(self):
        return self.shapes[-1]

    def is_group_indexed(self, upto=None):
        """Whether the output after ``upto`` layers carries a group axis."""
        upto = len(self.layers) if upto is None else upto
        shape = self.shapes[upto]
        return len(shape) == 4

    def prefix(self, n_layers):
        """Spec made of the first ``n_layers`` layers (a regression spec so it
        needs no Softmax); its parameters are ``params[:prefix.n_params]``."""
        return NetworkSpec(self.input_shape, self.layers[:n_layers], task="regression")

    def unpack(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got shape {params.shape}")
        return [[params[s.start:s.stop].reshape(s.shape) for s in slots] for slots in self._slots_by_layer]

    def pack(self, per_layer):
        out = np.empty(self.n_params)
        for slots, arrays in zip(self._slots_by_layer, per_layer):
            for s, a in zip(slots, arrays):
                out[s.start:s.stop] = np.asarray(a, dtype=float).reshape(-1)
        return out

    def layer_groups(self):
        """``(name, start, stop)`` of every parameterised layer (for
        layer-wise preconditioning)."""
        groups = []
        for i, slots in enumerate(self._slots_by_layer):
            if slots:
                groups.append((f"{i}:{self.layers[i].kind}", slots[0].start, slots[-1].stop))
        return groups

    def config(self):
        return {"input_shape": list(self.input_shape), "task": self.task, "noise_var": self.noise_var,
                "layers": [layer.config() for layer in self.layers]}

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        unknown = set(cfg) - {"input_shape", "task", "noise_var", "layers"}
        if unknown:
            raise InvalidArgumentError(f"unknown network keys: {sorted(unknown)}")
        layers = [layer_from_config(c) for c in cfg["layers"]]
        return cls(cfg["input_shape"], layers, task=cfg.get("task", "classification"),
                   noise_var=cfg.get("noise_var", 1.0))

    def __eq__(self, other):
        return isinstance(other, NetworkSpec) and self.config() == other.config()

    def __hash__(self):
        return hash(repr(self.config()))

    def __repr__(self):
        return f"NetworkSpec(input_shape={self.input_shape}, layers={list(self.layers)}, task={self.task!r})"


def _batch(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape == spec.input_shape:
        return x[None], True
    if x.shape[1:] != spec.input_shape:
        raise InvalidArgumentError(f"layer 0: expected input shape {spec.input_shape}, got {x.shape}")
    return x, False


def _run(spec, unpacked, x, upto, keep_cache):
    caches = []
    for i in range(upto):
        x, cache = spec.layers[i].forward(unpacked[i], x)
        if keep_cache:
            caches.append(cache)
    return x, caches


def forward(spec, params, x, upto=None):
    """Network output for one input or a batch.

    Classification specs return class probabilities; regression specs
    return raw outputs.  ``upto`` stops after that many layers.
    """
    xb, single = _batch(spec, x)
    upto = len(spec.layers) if upto is None else upto
    out, _ = _run(spec, spec.unpack(params), xb, upto, False)
    return out[0] if single else out


def _logits_and_caches(spec, unpacked, X):
    n_body = len(spec.layers) - (1 if spec.task == "classification" else 0)
    return _run(spec, unpacked, X, n_body, True)


def per_example_nll(spec, params, X, y):
    X, _ = _batch(spec, X)
    unpacked = spec.unpack(params)
    out, _ = _logits_and_caches(spec, unpacked, X)
    return _nll_terms(spec, out, y)[0]


def _nll_terms(spec, out, y):
    if spec.task == "classification":
        y = np.asarray(y, dtype=int)
        shift = out.max(axis=1, keepdims=True)
        logz = shift[:, 0] + np.log(np.exp(out - shift).sum(axis=1))
        nll = logz - out[np.arange(len(y)), y]
        probs = np.exp(out - logz[:, None])
        gout = probs
        gout[np.arange(len(y)), y] -= 1.0
        return nll, gout
    f = out.reshape(len(out), -1)[:, 0]
    resid = f - np.asarray(y, dtype=float)
    nll = 0.5 * resid**2 / spec.noise_var + 0.5 * np.log(2 * np.pi * spec.noise_var)
    return nll, (resid / spec.noise_var).reshape(out.shape)


def loss_and_grad(spec, params, X, y):
    """Mean negative log-likelihood over the batch and its gradient.

    Cross-entropy for classification, Gaussian NLL for regression.
    """
    X, _ = _batch(spec, X)
    if len(X) == 0:
        raise InvalidArgumentError("loss_and_grad needs a nonempty batch")
    unpacked = spec.unpack(params)
    out, caches = _logits_and_caches(spec, unpacked, X)
    nll, g = _nll_terms(spec, out, y)
    n = len(X)
    g = g / n
    grads = [None] * len(spec.layers)
    for i in range(len(caches) - 1, -1, -1):
        g, grads[i] = spec.layers[i].backward(unpacked[i], caches[i], g)
    if spec.task == "classification":
        grads[-1] = []
    return float(nll.mean()), spec.pack(grads)


def init_params(spec, seed, scale=1.0):
    """He-style initialisation: weights ``N(0, 2 / fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    out = np.zeros(spec.n_params)
    for s in spec.layout:
        if s.name == "bias":
            continue
        fan_in = int(np.prod(s.shape[1:])) if len(s.shape) > 1 else 1
        out[s.start:s.stop] = rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=s.stop - s.start)
    return out


def gconv_classifier(input_shape, n_classes, channels, group="p4m", kernel_size=3, stride=1,
                     padding="circular", bias=True):
    """Lift + (len(channels) - 1) group-to-group layers, ReLUs, group-and-space
    pooling, then a dense softmax head.  ``stride`` applies to the lift."""
    layers = [GConvLift(input_shape[0], channels[0], kernel_size, group, stride, padding, bias), ReLU()]
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        layers += [GConvGG(c_in, c_out, kernel_size, group, 1, padding, bias), ReLU()]
    layers += [GroupSpatialGAP(), Dense(channels[-1], n_classes, bias), Softmax()]
    return NetworkSpec(input_shape, layers)


def conv_classifier(input_shape, n_classes, channels, kernel_size=3, stride=1, padding="circular", bias=True):
    layers = [Conv2d(input_shape[0], channels[0], kernel_size, stride, padding, bias), ReLU()]
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        layers += [Conv2d(c_in, c_out, kernel_size, 1, padding, bias), ReLU()]
    layers += [GroupSpatialGAP(), Dense(channels[-1], n_classes, bias), Softmax()]
    return NetworkSpec(input_shape, layers)


def paired_specs(input_shape, n_classes, base_channels, n_layers=3, group="p4m", kernel_size=3,
                 stride=1, padding="circular"):
    """A standard CNN and a G-CNN with roughly equal parameter counts.

    G-conv channel counts are divided by ``sqrt(|G|)`` (rounded).
    """
    order = {"p4": 4, "p4m": 8}[group]
    g_channels = max(1, int(round(base_channels / np.sqrt(order))))
    conv = conv_classifier(input_shape, n_classes, [base_channels] * n_layers, kernel_size, stride, padding)
    gconv = gconv_classifier(input_shape, n_classes, [g_channels] * n_layers, group, kernel_size, stride, padding)
    return conv, gconv
