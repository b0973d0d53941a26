"""Group actions on feature maps and equivariance / invariance measures."""

import itertools

import numpy as np

from .. import augment as _augment
from ..exceptions import InvalidArgumentError
from .groups import cayley_table, element_index, group_elements, inverse_indices, transform_spatial
from .layers import GConvGG, GConvLift
from .network import forward


def group_act_on_feature_map(g, fmap, group=None):
    """Act with ``g`` on a feature map.

    Group-indexed maps ``(..., C, G, H, W)`` are transformed spatially and
    their group axis is permuted: ``(g . m)[h] = g(m[g^-1 h])``.  Maps
    without a group axis (``(..., C, H, W)`` or ``(H, W)``) are only
    transformed spatially; vectors are returned unchanged.
    """
    fmap = np.asarray(fmap)
    if fmap.ndim < 2:
        return fmap.copy()
    if group is not None:
        elems = group_elements(group)
        if fmap.shape[-3] != len(elems):
            raise InvalidArgumentError(f"group axis has size {fmap.shape[-3]}, expected {len(elems)} for {group}")
        gi = elems.index(g)
        perm = cayley_table(group)[inverse_indices(group)[gi]]
        fmap = np.take(fmap, perm, axis=-3)
    return np.ascontiguousarray(transform_spatial(fmap, g))


def _output_group(spec, upto):
    for layer in reversed(spec.layers[:upto]):
        if getattr(layer, "group", None):
            return layer.group
    return None


def equivariance_deviation(spec, params, x, g, upto=None):
    """``max |f(g x) - g'(f(x))|`` for the first ``upto`` layers of ``spec``.

    ``g'`` is the action of ``g`` on the output: the group-indexed action
    for group-indexed outputs, a spatial transform for plain maps, and the
    identity for vectors (where the identity becomes an invariance test).
    """
    upto = len(spec.layers) if upto is None else upto
    n_params = spec.prefix(upto).n_params if upto < len(spec.layers) else spec.n_params
    sub = spec if upto == len(spec.layers) else spec.prefix(upto)
    p = np.asarray(params)[:n_params]
    x = np.asarray(x, dtype=float)
    gx = transform_spatial(x, g)
    lhs = forward(sub, p, gx)
    out = forward(sub, p, x)
    group = _output_group(spec, upto) if sub.is_group_indexed() else None
    rhs = group_act_on_feature_map(g, out, group)
    return float(np.max(np.abs(lhs - rhs)))


def total_variation(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def total_variation_invariance(spec, params, x, bank, item=0):
    """Mean total variation between predicted class probabilities over all
    unordered pairs of the bank's augmentations of ``x``."""
    if spec.task != "classification":
        raise InvalidArgumentError("total variation needs a classification spec")
    if bank.B < 2:
        raise InvalidArgumentError("total variation needs a bank with B >= 2")
    augmented = np.stack([_augment.apply(bank.spec, x, bank.item_seed(b, item)) for b in range(bank.B)])
    probs = forward(spec, params, augmented)
    return mean_pairwise_tv(probs)


def mean_pairwise_tv(probs):
    probs = np.asarray(probs)
    iu = np.triu_indices(len(probs), k=1)
    return float(total_variation(probs[iu[0]], probs[iu[1]]).mean())


def gconv_literal(layer, weight, bias, x):
    """Direct evaluation of the group-sum definition of a G-convolution.

    Output element ``(h, t)`` with rotation part ``s`` and translation ``t``
    sums ``x(g') * psi(h^-1 g')`` over all input positions (and input group
    elements for group-to-group layers).  Only meant as a slow reference on
    small inputs.
    """
    if not isinstance(layer, (GConvLift, GConvGG)):
        raise InvalidArgumentError("gconv_literal needs a G-conv layer")
    x = np.asarray(x, dtype=float)
    if x.ndim == (4 if isinstance(layer, GConvGG) else 3):
        x = x[None]
    n_batch = x.shape[0]
    H, W = x.shape[-2:]
    k = layer.kernel_size
    r = k // 2
    elems = group_elements(layer.group)
    G = len(elems)
    circular = layer.padding == "circular"
    p = 0 if layer.padding == "valid" else r
    Ho = (H + 2 * p - k) // layer.stride + 1
    Wo = (W + 2 * p - k) // layer.stride + 1
    out = np.zeros((n_batch, layer.out_channels, G, Ho, Wo))
    uy, ux = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    for hi, h in enumerate(elems):
        inv_mat = h.inverse().matrix()
        for ty, tx in itertools.product(range(Ho), range(Wo)):
            cy, cx = ty * layer.stride - p + r, tx * layer.stride - p + r
            dy, dx = uy - cy, ux - cx
            if circular:
                dy = (dy + H // 2) % H - H // 2
                dx = (dx + W // 2) % W - W // 2
            ky = inv_mat[0, 0] * dy + inv_mat[0, 1] * dx
            kx = inv_mat[1, 0] * dy + inv_mat[1, 1] * dx
            inside = (np.abs(ky) <= r) & (np.abs(kx) <= r)
            iy, ix = ky[inside] + r, kx[inside] + r
            if isinstance(layer, GConvLift):
                # weight (O, C, k, k); x (N, C, H, W)
                patch = x[:, :, uy[inside], ux[inside]]
                kern = weight[:, :, iy, ix]
                out[:, :, hi, ty, tx] = np.einsum("ncp,ocp->no", patch, kern)
            else:
                # input element g' is read by filter slot h^-1 g'
                slot = [element_index(layer.group, h.inverse() * gp) for gp in elems]
                patch = x[:, :, :, uy[inside], ux[inside]]
                kern = weight[:, :, slot][:, :, :, iy, ix]
                out[:, :, hi, ty, tx] = np.einsum("ncgp,ocgp->no", patch, kern)
    if layer.bias and bias is not None:
        out += np.asarray(bias)[None, :, None, None, None]
    return out
