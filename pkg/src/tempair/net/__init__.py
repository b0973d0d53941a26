"""Micro network engine with group-equivariant layers."""

from .equivariance import (
    equivariance_deviation,
    gconv_literal,
    group_act_on_feature_map,
    mean_pairwise_tv,
    total_variation,
    total_variation_invariance,
)
from .groups import GroupElement, cayley_table, group_elements, transform_spatial
from .layers import Conv2d, Dense, GConvGG, GConvLift, GroupSpatialGAP, ReLU, Softmax, layer_from_config
from .network import (
    NetworkSpec,
    ParamSlot,
    conv_classifier,
    forward,
    gconv_classifier,
    init_params,
    loss_and_grad,
    paired_specs,
    per_example_nll,
)


def gconv_forward(layer, params, feature_map):
    """Run a single G-conv layer; ``params`` is ``[weight]`` or ``[weight, bias]``."""
    out, _ = layer.forward(params, feature_map)
    return out


__all__ = [
    "Conv2d", "Dense", "GConvGG", "GConvLift", "GroupElement", "GroupSpatialGAP", "NetworkSpec",
    "ParamSlot", "ReLU", "Softmax", "cayley_table", "conv_classifier", "equivariance_deviation",
    "forward", "gconv_classifier", "gconv_forward", "gconv_literal", "group_act_on_feature_map",
    "group_elements", "init_params", "layer_from_config", "loss_and_grad", "mean_pairwise_tv",
    "paired_specs", "per_example_nll", "total_variation", "total_variation_invariance",
    "transform_spatial",
]
