"""Weighted-graph topology measures, per-measure MAE reports and the
initialisation-scale sensitivity score."""

from dataclasses import astuple, dataclass, fields

import numpy as np

from gsr import kernels
from gsr.graphcore import WeightedGraph

EDGE_EPS = 1e-12


class MetricError(ValueError):
    """A measure is undefined for the given graph."""


def _adjacency(g):
    a = g.adjacency if isinstance(g, WeightedGraph) else np.asarray(g, dtype=np.float64)
    # the compiled kernels need C order; fancy-indexed inputs may arrive in F order
    return np.ascontiguousarray(np.where(a > EDGE_EPS, a, 0.0))


def edge_lengths(g):
    """Shortest-path lengths ``1 / w`` on edges, ``inf`` elsewhere (including the diagonal)."""
    a = _adjacency(g)
    with np.errstate(divide="ignore"):
        length = np.where(a > 0.0, 1.0 / np.where(a > 0.0, a, 1.0), np.inf)
    np.fill_diagonal(length, np.inf)
    return np.ascontiguousarray(length)


def shortest_paths(g):
    return kernels.brandes(edge_lengths(g))[0]


def degree_strength(g):
    return _adjacency(g).sum(axis=1)


def betweenness(g):
    """Normalised betweenness: pair-count share of shortest paths through each node."""
    a = _adjacency(g)
    n = len(a)
    if n < 3:
        return np.zeros(n)
    _, raw = kernels.brandes(edge_lengths(a))
    return raw / 2.0 / ((n - 1) * (n - 2) / 2.0)


def closeness(g):
    """Closeness with the reachable-component correction; isolated nodes get 0."""
    dist = shortest_paths(g)
    n = len(dist)
    out = np.zeros(n)
    if n < 2:
        return out
    for i in range(n):
        d = dist[i]
        reach = np.isfinite(d)
        reach[i] = False
        r = reach.sum()
        total = d[reach].sum()
        if r > 0 and total > 0:
            out[i] = (r / total) * (r / (n - 1))
    return out


def eigenvector_centrality(g, tol=1e-10, max_iter=10000):
    """Principal eigenvector by power iteration on ``A + I`` (L2-normalised, non-negative).

    Iteration stops once the L1 change falls below ``tol``; a few further
    steps then run while the change keeps shrinking, which brings the result
    to near machine precision at negligible cost.
    """
    a = _adjacency(g)
    n = len(a)
    if n == 0 or not a.any():
        raise MetricError("eigenvector centrality undefined for a graph without edges")
    x = np.full(n, 1.0 / np.sqrt(n))
    converged = False
    last = np.inf
    for _ in range(max_iter):
        nxt = a @ x + x
        nxt /= np.linalg.norm(nxt)
        change = np.abs(nxt - x).sum()
        x = nxt
        if converged and (change >= last or change == 0.0):
            return np.abs(x)
        converged = converged or change < tol
        last = change
    if converged:
        return np.abs(x)
    raise MetricError(f"eigenvector centrality did not converge in {max_iter} iterations")


def clustering_coefficients(g):
    """Geometric-mean weighted clustering with weights scaled by the maximum weight."""
    a = _adjacency(g)
    n = len(a)
    if n == 0 or not a.any():
        return np.zeros(n)
    w3 = np.cbrt(a / a.max())
    tri = np.einsum("ij,jk,ki->i", w3, w3, w3)
    k = (a > 0).sum(axis=1).astype(np.float64)
    denom = k * (k - 1.0)
    return np.where(denom > 0, tri / np.where(denom > 0, denom, 1.0), 0.0)


def greedy_modularity(g):
    """Agglomerative modularity maximisation (CNM) on the weighted graph.

    Starting from singletons, repeatedly merge the connected pair of
    communities with the largest modularity gain while it is positive.
    Ties go to the lowest (i, j) community pair; the higher index is merged
    into the lower one.  Returns a community label per node.
    """
    a = _adjacency(g)
    n = len(a)
    total = a.sum()
    labels = np.arange(n)
    if total == 0:
        return labels
    e = a / total
    frac = e.sum(axis=1)
    alive = np.ones(n, dtype=bool)
    while True:
        gain = 2.0 * (e - np.outer(frac, frac))
        valid = np.triu((e > 0) & alive[:, None] & alive[None, :], 1)
        if not valid.any():
            break
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        i, j = divmod(best, n)
        if not gain[i, j] > 0:
            break
        e[i, :] += e[j, :]
        e[:, i] += e[:, j]
        e[j, :] = 0.0
        e[:, j] = 0.0
        frac[i] += frac[j]
        frac[j] = 0.0
        alive[j] = False
        labels[labels == j] = i
    _, labels = np.unique(labels, return_inverse=True)
    return labels.reshape(-1)


def participation(g, labels=None):
    """``1 - sum_m (s_im / s_i)^2`` over modules ``m``; zero-strength nodes get 0."""
    a = _adjacency(g)
    labels = greedy_modularity(a) if labels is None else np.asarray(labels)
    n_mod = labels.max() + 1 if len(labels) else 0
    member = np.zeros((len(a), n_mod))
    member[np.arange(len(a)), labels] = 1.0
    s_mod = a @ member
    s = s_mod.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(s[:, None] > 0, s_mod / np.where(s > 0, s, 1.0)[:, None], 0.0)
    return np.where(s > 0, 1.0 - (frac ** 2).sum(axis=1), 0.0)


def mean_path_length(g):
    """Mean shortest-path length over ordered reachable pairs."""
    dist = shortest_paths(g)
    off = ~np.eye(len(dist), dtype=bool) & np.isfinite(dist)
    if not off.any():
        raise MetricError("no reachable node pairs")
    return float(dist[off].mean())


def small_worldness(g, n_surrogates=10, seed=0):
    """``(L / L_rand) / mean clustering`` with degree-preserving rewired surrogates."""
    a = _adjacency(g)
    c_mean = float(clustering_coefficients(a).mean())
    if c_mean < 1e-12:
        raise MetricError("small-worldness undefined: mean clustering is zero")
    length = mean_path_length(a)
    n_edges = int(np.count_nonzero(np.triu(a, 1)))
    rand = [mean_path_length(kernels.rewire_undirected(a, 10 * n_edges, seed * 1000003 + k))
            for k in range(n_surrogates)]
    return (length / float(np.mean(rand))) / c_mean


@dataclass(frozen=True)
class MetricReport:
    """Per-measure MAE between a predicted and a true graph (column order fixed)."""

    edge_weights: float
    betweenness: float
    closeness: float
    eigenvector: float
    degree: float
    participation: float
    clustering: float
    small_worldness: float

    @classmethod
    def columns(cls):
        return tuple(f.name for f in fields(cls))

    def as_row(self):
        return astuple(self)


MEASURES = MetricReport.columns()

_VECTOR_MEASURES = (
    ("betweenness", betweenness),
    ("closeness", closeness),
    ("eigenvector", eigenvector_centrality),
    ("degree", degree_strength),
    ("participation", participation),
    ("clustering", clustering_coefficients),
)


def metric_mae(pred, truth, seed=0, n_surrogates=10, undefined="raise"):
    """Compare two graphs on the edge weights and every topology measure.

    With ``undefined="nan"`` a measure that is undefined for either graph
    (for example small-worldness of a triangle-free prediction) is reported as
    NaN instead of raising :class:`MetricError`.
    """
    if undefined not in ("raise", "nan"):
        raise ValueError(f"undefined must be 'raise' or 'nan', got {undefined!r}")
    p, t = _adjacency(pred), _adjacency(truth)
    if p.shape != t.shape:
        raise ValueError(f"graphs differ in size: {p.shape} vs {t.shape}")
    iu = np.triu_indices(len(p), 1)
    vals = {"edge_weights": float(np.mean(np.abs(p[iu] - t[iu])))}
    measures = _VECTOR_MEASURES + (
        ("small_worldness", lambda a: small_worldness(a, n_surrogates, seed)),)
    for name, fn in measures:
        try:
            vals[name] = float(np.mean(np.abs(fn(p) - fn(t))))
        except MetricError:
            if undefined == "raise":
                raise
            vals[name] = float("nan")
    return MetricReport(**vals)


def sensitivity_srel(per_seed, all_model_scores):
    """Worst-case seed spread of the Bi-MP family relative to the spread across models.

    ``per_seed`` maps ``(scale, model)`` to the per-seed scores of that cell;
    ``all_model_scores`` holds one (seed-averaged) score per model in the
    comparison.  Both standard deviations use the population convention.
    """
    if len({s for s, _ in per_seed}) < 2 or len({m for _, m in per_seed}) < 2:
        raise ValueError("need at least 2 scales and 2 models")
    worst = max(float(np.std(np.asarray(v, dtype=np.float64))) for v in per_seed.values())
    spread = float(np.std(np.asarray(all_model_scores, dtype=np.float64)))
    if spread == 0.0:
        raise ZeroDivisionError("score spread across models is zero")
    return worst / spread
