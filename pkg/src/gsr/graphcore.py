"""Graph containers, bipartite and dual constructions, permutations, TopK pooling."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class GraphError(ValueError):
    """Invalid graph construction or file contents."""


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Symmetric weighted adjacency in [0, 1] with zero diagonal, plus node features."""

    adjacency: np.ndarray
    features: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {a.shape}")
        if np.isnan(a).any():
            raise GraphError("adjacency contains NaN")
        a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 0.0)
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise GraphError(f"adjacency entries must lie in [0, 1], got [{a.min()}, {a.max()}]")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        x = self.features
        x = np.zeros((a.shape[0], 0)) if x is None else np.array(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != a.shape[0]:
            raise GraphError(f"features have {x.shape[0]} rows for {a.shape[0]} nodes")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @property
    def n(self):
        return self.adjacency.shape[0]

    def neighbor_lists(self, threshold=1e-12):
        return [np.flatnonzero(row > threshold) for row in self.adjacency]


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Complete bipartite graph between LR (first ``n_l`` rows) and HR nodes."""

    n_l: int
    n_h: int
    features: np.ndarray

    @property
    def n(self):
        return self.n_l + self.n_h

    @property
    def adjacency(self):
        a = np.zeros((self.n, self.n))
        a[:self.n_l, self.n_l:] = 1.0
        a[self.n_l:, :self.n_l] = 1.0
        return a

    @property
    def n_edges(self):
        return self.n_l * self.n_h

    def csr(self, self_loops=True):
        """Incoming-neighbour CSR (destination-major) over the stacked node order."""
        return bipartite_csr(self.n_l, self.n_h, self_loops)


@lru_cache(maxsize=64)
def bipartite_csr(n_l, n_h, self_loops=True):
    lr = np.arange(n_l)
    hr = np.arange(n_l, n_l + n_h)
    rows = []
    for i in range(n_l + n_h):
        nbrs = hr if i < n_l else lr
        rows.append(np.append(nbrs, i) if self_loops else nbrs)
    return _rows_to_csr(rows)


def _rows_to_csr(rows):
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    return indptr, indices


def csr_from_adjacency(adjacency, self_loops=True, threshold=1e-12):
    """Destination-major CSR of ``adjacency > threshold`` (optionally with self loops).

    Returns ``(indptr, indices, weights)`` where ``weights`` are the adjacency
    values on each edge (1.0 on added self loops).
    """
    a = np.asarray(adjacency)
    n = a.shape[0]
    mask = a > threshold
    np.fill_diagonal(mask, False)
    if self_loops:
        mask = mask | np.eye(n, dtype=bool)
    rows, cols = np.nonzero(mask)
    weights = np.where(rows == cols, 1.0, a[rows, cols])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols.astype(np.int64), weights.astype(np.float64)


@dataclass(frozen=True, eq=False)
class DualGraph:
    """Line graph of the complete graph on ``primal_n`` nodes.

    Dual node ``u`` is the primal pair ``pairs[u] = (i, j)`` with ``i < j`` in
    lexicographic order; two dual nodes are adjacent iff their pairs share an
    endpoint.  Adjacency is kept as neighbour lists in CSR form.
    """

    primal_n: int
    pairs: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    dual_features: np.ndarray = None

    @property
    def n_nodes(self):
        return len(self.pairs)

    @property
    def n_edges(self):
        return len(self.indices) // 2

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def sparsity(self):
        m = self.n_nodes
        return 1.0 - len(self.indices) / (m * m)

    def index_of(self, i, j):
        return pair_index(self.primal_n, i, j)

    def neighbors(self, u):
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def with_self_loops(self):
        """CSR with each dual node's own index appended to its segment."""
        return _dual_structure(self.primal_n, True)[1:]

    def flat_upper_index(self):
        """Row-major positions ``i*n+j`` of every pair, for lifting from n×n arrays."""
        n = self.primal_n
        return self.pairs[:, 0] * n + self.pairs[:, 1]


def pair_index(n, i, j):
    """Lexicographic index of the unordered pair ``{i, j}`` among pairs of ``range(n)``."""
    if i == j:
        raise GraphError("pair endpoints must differ")
    if i > j:
        i, j = j, i
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


@lru_cache(maxsize=32)
def _dual_structure(n, self_loops=False):
    iu, ju = np.triu_indices(n, 1)
    m = len(iu)
    index = np.full((n, n), -1, dtype=np.int64)
    index[iu, ju] = np.arange(m)
    index[ju, iu] = np.arange(m)
    k = np.arange(n)
    # neighbours of {i, j}: {i, k} for k ∉ {i, j}, then {j, k} for k ∉ {i, j}
    rows = []
    for u in range(m):
        i, j = iu[u], ju[u]
        keep = (k != i) & (k != j)
        nb = np.concatenate([index[i, keep], index[j, keep]])
        nb.sort()
        rows.append(np.append(nb, u) if self_loops else nb)
    indptr, indices = _rows_to_csr(rows) if rows else (np.zeros(1, np.int64), np.zeros(0, np.int64))
    pairs = np.stack([iu, ju], axis=1).astype(np.int64)
    pairs.setflags(write=False)
    return pairs, indptr, indices


def build_bipartite(lr_features, hr_features):
    xl = np.atleast_2d(np.asarray(lr_features, dtype=np.float64))
    xh = np.atleast_2d(np.asarray(hr_features, dtype=np.float64))
    if xl.shape[1] != xh.shape[1]:
        raise GraphError(f"LR features have {xl.shape[1]} columns, HR features {xh.shape[1]}")
    stacked = np.vstack([xl, xh])
    stacked.setflags(write=False)
    return BipartiteGraph(xl.shape[0], xh.shape[0], stacked)


def build_dual(n_h, edge_features=None):
    """Dual (line) graph of K_{n_h}; dual node {i,j} carries ``edge_features[i, j]``."""
    if n_h < 2:
        raise GraphError(f"dual graph needs at least 2 primal nodes, got {n_h}")
    feats = None
    if edge_features is not None:
        e = np.asarray(edge_features, dtype=np.float64)
        if e.shape != (n_h, n_h):
            raise GraphError(f"edge features must be {n_h}x{n_h}, got {e.shape}")
        if not np.array_equal(e, e.T):
            raise GraphError("edge features must be symmetric")
        pairs = _dual_structure(n_h)[0]
        feats = e[pairs[:, 0], pairs[:, 1]][:, None]
    pairs, indptr, indices = _dual_structure(n_h)
    return DualGraph(n_h, pairs, indptr, indices, feats)


def dual_to_primal(dual, learned_features):
    """Map one scalar per dual node back to a symmetric zero-diagonal n×n matrix."""
    f = np.asarray(learned_features, dtype=np.float64).reshape(-1)
    if len(f) != dual.n_nodes:
        raise GraphError(f"expected {dual.n_nodes} dual features, got {len(f)}")
    n = dual.primal_n
    out = np.zeros((n, n))
    out[dual.pairs[:, 0], dual.pairs[:, 1]] = f
    out[dual.pairs[:, 1], dual.pairs[:, 0]] = f
    return out


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``range(n)``; node ``i`` moves to position ``mapping[i]``."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise GraphError("mapping is not a permutation")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def random(cls, n, rng):
        return cls(tuple(rng.permutation(n)))

    @property
    def n(self):
        return len(self.mapping)

    def matrix(self):
        p = np.zeros((self.n, self.n))
        p[list(self.mapping), np.arange(self.n)] = 1.0
        return p

    def inverse(self):
        inv = [0] * self.n
        for i, m in enumerate(self.mapping):
            inv[m] = i
        return Permutation(tuple(inv))

    def apply_rows(self, x):
        """``P x``: row ``i`` of ``x`` ends up at row ``mapping[i]``."""
        x = np.asarray(x)
        out = np.empty_like(x)
        out[list(self.mapping)] = x
        return out


def permute_graph(g, p):
    if p.n != g.n:
        raise GraphError(f"permutation of length {p.n} for graph with {g.n} nodes")
    src = np.array(p.inverse().mapping)
    adj = g.adjacency[np.ix_(src, src)]
    return WeightedGraph(adj, g.features[src])


def induced_subgraph(g, nodes):
    nodes = np.asarray(nodes, dtype=np.int64)
    return WeightedGraph(g.adjacency[np.ix_(nodes, nodes)], g.features[nodes])


def topk_pool(g, score, k):
    """Keep the ``k`` highest-scoring nodes (ties: lower index) and their induced subgraph.

    Returns ``(subgraph, kept)`` with ``kept`` in descending-score order.
    """
    score = np.asarray(score, dtype=np.float64).reshape(-1)
    if len(score) != g.n:
        raise GraphError(f"score has length {len(score)} for {g.n} nodes")
    if not 1 <= k <= g.n:
        raise GraphError(f"k={k} outside [1, {g.n}]")
    order = np.lexsort((np.arange(g.n), -score))
    kept = order[:k]
    return induced_subgraph(g, kept), kept


def load_matrix(path):
    """Read a whitespace-separated square matrix; checks symmetry to 1e-9."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    a = np.array(rows, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"{path}: matrix is not square ({len(rows)} rows)")
    check_symmetric(a, 1e-9, str(path))
    d = np.diag(a).copy()
    d[np.abs(d) < 1e-12] = 0.0
    np.fill_diagonal(a, d)
    return a


def check_symmetric(a, tol, where="matrix"):
    nan = np.argwhere(np.isnan(a))
    if len(nan):
        i, j = nan[0]
        raise GraphError(f"{where}: NaN at row {i}, col {j}")
    diff = np.abs(a - a.T)
    if diff.size and diff.max() > tol:
        i, j = np.unravel_index(np.argmax(diff), diff.shape)
        raise GraphError(f"{where}: asymmetric at row {i}, col {j} (|diff|={diff[i, j]:.3g})")


def save_matrix(path, a):
    """Write ``a`` in the plain-text matrix format (round-trip exact)."""
    with open(path, "w") as fh:
        for row in np.asarray(a, dtype=np.float64):
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")
