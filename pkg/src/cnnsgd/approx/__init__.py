"""Explicit ReLU network constructions: gadgets, piecewise Taylor nets and the
embedding of feedforward hierarchies into the convolutional class."""

from .embed import cnn_from_ffnets, embedding_architecture, ffnet_hierarchy_values, linear_node_net
from .ffnet import (FeedForwardNet, WeightStats, affine, compose, compose_nets, composition_bounds,
                    dumps_net, eval_exact, eval_ffnet, identity_net, loads_net, net_weight_stats,
                    pad_depth, parallel, select)
from .gadgets import (PreconditionError, build_indicator_net, build_mult_net, build_multd_net,
                      build_poly_net, build_square_net, build_test_net, build_trunc_net,
                      in_safe_region, monomials, tooth_net)
from .taylor import (SizeConditionWarning, TaylorConfig, TaylorNet, UnsupportedScaleError,
                     build_shifted_taylor, build_taylor_net, phi_recursion, taylor_direct)

__all__ = [name for name in dir() if not name.startswith("_")]
