"""The 3-node instrument part graph and its GCN message passing.

Nodes are ordered (base, wrist, tip). The canonical edge set is the chain
base->wrist->tip plus a self-loop on every node; messages flow only along
in-edges, so perturbing the tip can never reach the base. Normalization is
symmetric square-root degree over the self-loop-augmented directed
adjacency, degrees counted as in-degrees.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

NODE_NAMES = ("base", "wrist", "tip")
CHAIN_EDGES = ((0, 1), (1, 2))  # (src, dst): base->wrist, wrist->tip


@dataclass(frozen=True, eq=False)
class PartGraph:
    """edges are (src, dst) pairs; adjacency holds 1/c_ij at [dst, src]."""

    edges: tuple
    adjacency: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(NODE_NAMES)
        raw = np.zeros((n, n))
        for src, dst in self.edges:
            raw[dst, src] = 1.0
        # zero in-degree sources (possible only in stripped test fixtures)
        # normalize with degree 1; every canonical-graph degree is >= 1
        deg_in = np.maximum(raw.sum(axis=1), 1.0)
        adj = np.zeros((n, n))
        for src, dst in self.edges:
            adj[dst, src] = 1.0 / (np.sqrt(deg_in[dst]) * np.sqrt(deg_in[src]))
        object.__setattr__(self, "adjacency", adj)
        adj.setflags(write=False)

    @property
    def num_nodes(self):
        return len(NODE_NAMES)

    def in_neighbors(self, node):
        return tuple(int(s) for s, d in self.edges if d == node)


def build_graph():
    """Canonical instrument graph: chain edges plus self-loops on all nodes."""
    self_loops = tuple((k, k) for k in range(len(NODE_NAMES)))
    return PartGraph(CHAIN_EDGES + self_loops)


def init_gcn_params(dim, layers, rng, prefix):
    params = {}
    bound = np.sqrt(6.0 / dim)  # He-gain uniform, matching the conv stages
    for layer in range(layers):
        w = rng.uniform(-bound, bound, size=(dim, dim))
        params[f"{prefix}.gcn{layer}.w"] = ad.Tensor(w, requires_grad=True)
    return params


def gcn_forward(graph, H0, weights):
    """Apply the GCN layers: H_{l+1} = sigma(A_hat @ H_l @ W_l).

    sigma is ReLU on all but the final layer; the final layer is linear so
    node embeddings stay signed for the contrastive dot products.
    """
    H = H0 if isinstance(H0, ad.Tensor) else ad.Tensor(H0)
    if H.shape[0] != graph.num_nodes:
        raise ValueError(f"expected {graph.num_nodes} node rows, got shape {H.shape}")
    A = ad.Tensor(graph.adjacency)
    for layer, W in enumerate(weights):
        if W.shape != (H.shape[1], H.shape[1]):
            raise ValueError(f"gcn layer {layer}: weight shape {W.shape} does not match state dim {H.shape[1]}")
        H = ad.matmul(A, ad.matmul(H, W))
        if layer < len(weights) - 1:
            H = ad.relu(H)
    return H


def fuse_attention(F, node_states):
    """Channel attention: stack node states in partition order into a length-C
    vector a and scale channel c of F by sigmoid(a_c)."""
    if isinstance(node_states, ad.Tensor):
        a = ad.reshape(node_states, (node_states.data.size,))
    else:
        a = ad.concat([ad.reshape(v, (v.data.size,)) for v in node_states], axis=0)
    if a.data.shape[0] != F.shape[0]:
        raise ValueError(
            f"stacked node states ({a.data.shape[0]}) must match feature channels ({F.shape[0]})"
        )
    return ad.scale_channels(F, ad.sigmoid(a))
