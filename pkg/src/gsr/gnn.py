"""Layers: the MPNN subclass, graph-transformer attention, GraphNorm, FFN blocks,
and the edge-initialisation / normalisation helpers used for edge inference."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from gsr import diffmath as dm
from gsr.diffmath import DiffArray


class Module:
    """Parameter holder; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, DiffArray) and val.requires_grad and val.node is None:
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, DiffArray) and not val.requires_grad:
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_buffers(f"{prefix}{name}."))
        return out


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return DiffArray(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = glorot(rng, in_dim, out_dim)
        self.bias = DiffArray(np.zeros((1, out_dim)), requires_grad=True) if bias else None

    def __call__(self, x):
        y = dm.matmul(x, self.weight)
        return dm.add(y, self.bias) if self.bias is not None else y


class FeedForward(Module):
    """Affine maps with ReLU between them (none after the last)."""

    def __init__(self, dims, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        for i, layer in enumerate(self.layers):
            setattr(self, f"fc{i}", layer)

    def named_parameters(self, prefix=""):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}fc{i}."))
        return out

    def named_buffers(self, prefix=""):
        return {}

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = dm.relu(x)
        return x


@dataclass(frozen=True)
class Neighborhood:
    """Destination-major CSR of incoming neighbours, optionally weighted.

    ``weights`` may be a constant ndarray (E,) or an E×1 DiffArray.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: object = None

    @property
    def n(self):
        return len(self.indptr) - 1

    @classmethod
    def from_lists(cls, lists, self_loops=False):
        rows = []
        for i, nb in enumerate(lists):
            nb = np.asarray(nb, dtype=np.int64)
            rows.append(np.append(nb, i) if self_loops else nb)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
        return cls(indptr, indices)

    @classmethod
    def from_adjacency(cls, adjacency, self_loops=True, weighted=False, threshold=1e-12):
        from gsr.graphcore import csr_from_adjacency
        indptr, indices, w = csr_from_adjacency(adjacency, self_loops, threshold)
        return cls(indptr, indices, w if weighted else None)

    def edge_weight(self):
        if self.weights is None:
            return None
        if isinstance(self.weights, DiffArray):
            return self.weights
        return DiffArray(np.asarray(self.weights, dtype=np.float64).reshape(-1, 1))

    def sparse_matrix(self):
        data = np.ones(len(self.indices)) if self.weights is None else np.asarray(
            self.weights.value[:, 0] if isinstance(self.weights, DiffArray) else self.weights)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class GraphNorm(Module):
    """Per-graph normalisation with learnable scale, shift and mean-scale."""

    def __init__(self, dim, eps=1e-5):
        self.weight = DiffArray(np.ones((1, dim)), requires_grad=True)
        self.bias = DiffArray(np.zeros((1, dim)), requires_grad=True)
        self.mean_scale = DiffArray(np.ones((1, dim)), requires_grad=True)
        self.eps = eps

    def __call__(self, x, offsets=None):
        offsets = [0, x.rows] if offsets is None else offsets
        mu = dm.segment_mean_rows(x, offsets)
        centred = dm.subtract(x, dm.mul(mu, self.mean_scale))
        var = dm.segment_mean_rows(dm.mul(centred, centred), offsets)
        std = dm.power(dm.add(var, self.eps), 0.5)
        return dm.add(dm.mul(dm.div(centred, std), self.weight), self.bias)


def head_count(width, heads):
    """Largest head count ≤ ``heads`` that divides ``width``."""
    for h in range(min(heads, width), 0, -1):
        if width % h == 0:
            return h
    return 1


class GraphTransformerLayer(Module):
    """Multi-head neighbourhood attention → output projection → GraphNorm → ReLU.

    The neighbourhood passed to :meth:`__call__` must already contain each
    node's self loop if the node should attend to itself.
    """

    def __init__(self, in_dim, hidden, heads, rng, dropout=0.0):
        self.heads = head_count(hidden, heads)
        self.hidden = hidden
        self.dropout = dropout
        self.query = Linear(in_dim, hidden, rng)
        self.key = Linear(in_dim, hidden, rng)
        self.value = Linear(in_dim, hidden, rng)
        self.out = Linear(hidden, hidden, rng)
        self.norm = GraphNorm(hidden)

    def attend(self, x, nbhd):
        q, k, v = self.query(x), self.key(x), self.value(x)
        return dm.neighborhood_attention(q, k, v, nbhd.indptr, nbhd.indices, self.heads,
                                         nbhd.edge_weight())

    def __call__(self, x, nbhd, offsets=None, training=False, rng=None):
        agg, _ = self.attend(x, nbhd)
        h = dm.relu(self.norm(self.out(agg), offsets))
        return dm.dropout(h, self.dropout, training, rng)


class MpnnLayer(Module):
    """``z_i = beta x_i + (1 - beta) sum_j w_ij x_j`` followed by ``f_n(z_i)``.

    ``weight_rule`` is ``"uniform"`` (w_ij = 1, or the neighbourhood's constant
    weights) or ``"attention"`` (softmax over N_i of scaled dot products).
    A learnable beta is kept in [0, 1] through a sigmoid.
    """

    def __init__(self, in_dim, out_dim, rng, beta=0.5, learnable_beta=False,
                 weight_rule="uniform"):
        if weight_rule not in ("uniform", "attention"):
            raise ValueError(f"unknown weight rule {weight_rule!r}")
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.weight_rule = weight_rule
        self.learnable_beta = learnable_beta
        if learnable_beta:
            b = min(max(beta, 1e-6), 1 - 1e-6)
            self.beta_logit = DiffArray([[np.log(b / (1 - b))]], requires_grad=True)
        else:
            self.beta_const = float(beta)
        if weight_rule == "attention":
            self.query = Linear(in_dim, in_dim, rng)
            self.key = Linear(in_dim, in_dim, rng)
        self.f_n = FeedForward([in_dim, out_dim, out_dim], rng)

    def beta(self):
        if self.learnable_beta:
            return dm.sigmoid(self.beta_logit)
        return DiffArray([[self.beta_const]])

    def aggregate(self, x, nbhd):
        if nbhd.indices.size and nbhd.indices.max() >= x.rows:
            raise IndexError("neighbour index out of range")
        if self.weight_rule == "uniform":
            if isinstance(nbhd.weights, DiffArray):
                msg = dm.mul(dm.gather_rows(x, nbhd.indices), nbhd.weights)
                seg = np.repeat(np.arange(nbhd.n), np.diff(nbhd.indptr))
                return dm.scatter_add_rows(msg, seg, nbhd.n)
            return dm.spmm(nbhd.sparse_matrix(), x)
        agg, _ = dm.neighborhood_attention(self.query(x), self.key(x), x, nbhd.indptr,
                                           nbhd.indices, 1, nbhd.edge_weight())
        return agg

    def combine(self, x, nbhd):
        beta = self.beta()
        return dm.add(dm.mul(x, beta), dm.mul(self.aggregate(x, nbhd), dm.subtract(1.0, beta)))

    def __call__(self, x, nbhd):
        return self.f_n(self.combine(x, nbhd))


def dot_edge_init(xh):
    """Edge features ``E_ij = x_i · x_j`` with the diagonal zeroed."""
    return dm.zero_diagonal(dm.matmul(xh, dm.transpose(xh)))


def minmax_normalize(e):
    """Min-max scaling of off-diagonal entries to [0, 1]; constant input gives zeros."""
    return dm.minmax_offdiag(e)


def learned_domain(x_ref):
    """Learnable computation domain ``A = Â ⊙ H(Â - 0.5)`` with ``Â = sigmoid(X Xᵀ)``.

    Returns ``(A_ref, Â)``.  The step function is a constant mask, so gradients
    reach ``x_ref`` only through the ``Â`` factor.
    """
    a_hat = dm.sigmoid(dm.matmul(x_ref, dm.transpose(x_ref)))
    return dm.mul(a_hat, dm.heaviside_mask(a_hat, 0.5)), a_hat


def weighted_neighborhood(weights_dense, self_loops=True):
    """Neighbourhood over the non-zero off-diagonal entries of a dense DiffArray.

    Edge weights are gathered from ``weights_dense`` so they stay differentiable;
    self loops get constant weight 1.
    """
    n = weights_dense.rows
    mask = weights_dense.value > 0.0
    np.fill_diagonal(mask, False)
    if self_loops:
        mask |= np.eye(n, dtype=bool)
    rows, cols = np.nonzero(mask)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    eye = np.eye(n)
    w_full = dm.add(dm.mul(weights_dense, 1.0 - eye), eye)
    w = dm.gather_rows(dm.reshape(w_full, n * n, 1), rows * n + cols)
    return Neighborhood(indptr, cols.astype(np.int64), w)


def complete_neighborhood(n, self_loops=True):
    """Neighbourhood of K_n (the fixed computation domain ``1 - I``)."""
    a = np.ones((n, n))
    return Neighborhood.from_adjacency(a, self_loops=self_loops)
