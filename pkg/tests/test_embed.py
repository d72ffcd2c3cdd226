import numpy as np
import pytest

from cnnsgd.approx.embed import (cnn_from_ffnets, embedding_architecture, ffnet_hierarchy_values,
                                 linear_node_net)
from cnnsgd.approx.ffnet import FeedForwardNet
from cnnsgd.hmax import HierarchicalModel, Node, eval_maxpool_model
from cnnsgd.model import cnn_values


def test_linear_node_net(rng):
    net = linear_node_net([0.1, -2.0, 3.0, 0.5], 0.25)
    Z = rng.normal(size=(20, 4))
    np.testing.assert_allclose(net(Z)[:, 0], Z @ [0.1, -2.0, 3.0, 0.5] + 0.25, atol=1e-12)


def test_mean_node_level1(rng):
    X = rng.uniform(size=(50, 4, 4))
    cfg, params = cnn_from_ffnets(linear_node_net([0.25] * 4), 1)
    ref = eval_maxpool_model(HierarchicalModel.uniform(1, Node("mean")), X)
    np.testing.assert_allclose(cnn_values(cfg, params.flat, X), ref, atol=1e-12)


def test_mean_node_level2(rng):
    X = rng.uniform(size=(20, 6, 6))
    cfg, params = cnn_from_ffnets(linear_node_net([0.25] * 4), 2)
    ref = eval_maxpool_model(HierarchicalModel.uniform(2, Node("mean")), X)
    np.testing.assert_allclose(cnn_values(cfg, params.flat, X), ref, atol=1e-12)


@pytest.mark.parametrize("l", [1, 2])
def test_random_node_nets(l, rng):
    nets = [[FeedForwardNet([rng.normal(size=(3, 5)), rng.normal(size=(2, 4)), rng.normal(size=(1, 3))])
             for _ in range(4 ** (l - k))] for k in range(1, l + 1)]
    X = rng.uniform(size=(20, 2 ** l + 2, 2 ** l + 1))
    cfg, params = cnn_from_ffnets(nets, l)
    np.testing.assert_allclose(cnn_values(cfg, params.flat, X), ffnet_hierarchy_values(nets, l, X),
                               atol=1e-9)


def test_architecture_shape():
    cfg = embedding_architecture(2, 3, 2)
    assert cfg.L1 == 5 * 2 + 2 and cfg.L2 == 2
    assert len(cfg.filter_sizes) == cfg.L1 and set(cfg.channels) == {cfg.channels[0]}


def test_wrong_node_count(rng):
    net = linear_node_net([0.25] * 4)
    with pytest.raises(ValueError):
        cnn_from_ffnets([[net] * 3, [net]], 2)
