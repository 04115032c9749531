"""Shared toy fixtures: a 6-node, 3-relation graph and parameter builders."""

import numpy as np
import pytest

from kgar.data import KnowledgeGraph
from kgar.encoder import EncoderConfig
from kgar.model import init_params

# node 1 has two relation-0 in-edges (a real attention group), node 3 mixes
# relations, every relation occurs in both directions somewhere
TOY_TRIPLES = [
    (0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 2, 4), (4, 0, 5),
    (5, 1, 0), (0, 2, 3), (2, 0, 1), (4, 1, 1), (3, 0, 0),
]
TOY_NODES = 6
TOY_RELATIONS = 3
TOY_LABELS = {0: 0, 1: 1, 2: 2, 3: 3, 4: 0, 5: 1}  # 4 classes


@pytest.fixture
def toy_graph():
    return KnowledgeGraph(TOY_TRIPLES, TOY_NODES, TOY_RELATIONS)


def toy_config(embed_dim=8, num_layers=2, num_blocks=2, **kw):
    kw.setdefault("dropout_attention", 0.0)
    kw.setdefault("dropout_conv", 0.0)
    return EncoderConfig(embed_dim=embed_dim, num_layers=num_layers,
                         num_blocks=num_blocks, **kw)


def toy_params(config, task="classify", seed=0, num_classes=4,
               decoder="complex", num_entities=TOY_NODES,
               num_relations=TOY_RELATIONS):
    rng = np.random.default_rng(seed)
    return init_params(num_entities, num_relations, config, task, rng,
                       num_classes=num_classes, decoder=decoder)


def to_oracle_params(params, num_blocks):
    """Convert package ModelParams to the scalar oracle's nested lists."""
    layers = []
    for lw in params.layers:
        blocks = {}
        for direction, key in (("forward", "fwd"), ("backward", "bwd")):
            rel_map = {}
            for r, q in enumerate(lw.blocks[direction]):
                din_b = q.values.shape[0] // num_blocks
                rel_map[r] = [q.values[k * din_b:(k + 1) * din_b].tolist()
                              for k in range(num_blocks)]
            blocks[key] = rel_map
        layers.append({"att_W": lw.att_W.values.tolist(),
                       "self_W": lw.self_W.values.tolist(),
                       "blocks": blocks})
    out = {
        "embedding": params.embedding.values.tolist(),
        "layers": layers,
        "gates": params.gates.values[:, 0].tolist(),
    }
    if params.head is not None:
        out["cls_W"] = params.head.values.tolist()
    if params.rel_re is not None:
        out["rel_re"] = params.rel_re.values.tolist()
        out["rel_im"] = params.rel_im.values.tolist()
    if params.rel_diag is not None:
        out["rel_diag"] = params.rel_diag.values.tolist()
    return out
