"""Synthetic datasets: SBM/BA/WS super-resolution scenarios, particle systems
with analytic edge functions, and connectome-shaped matrix pairs."""

import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from gsr import kernels
from gsr.graphcore import (GraphError, WeightedGraph, check_symmetric, load_matrix, save_matrix,
                           topk_pool)

FAMILIES = ("SBM", "BA", "WS")
POOLING = ("degree", "betweenness", "clustering", "participation")


# ---------------------------------------------------------------------------
# random topologies
# ---------------------------------------------------------------------------

def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


def gen_sbm(n, n_clusters, p_in, p_out, rng):
    """Stochastic block model with contiguous, near-equal blocks."""
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= clusters <= n, got {n_clusters}")
    _check_prob("p_in", p_in)
    _check_prob("p_out", p_out)
    labels = np.concatenate([np.full(len(b), i) for i, b in
                             enumerate(np.array_split(np.arange(n), n_clusters))])
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draw = rng.random((n, n))
    adj = np.triu(draw < prob, 1)
    return (adj | adj.T).astype(np.float64)


def gen_ba(n, m, rng):
    """Barabási–Albert growth from a seed clique on ``m`` nodes.

    Every later node attaches to ``m`` distinct existing nodes chosen with
    probability proportional to degree, so the edge count is
    ``m*(n-m) + m*(m-1)/2``.
    """
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= m < n, got m={m}, n={n}")
    adj = np.zeros((n, n))
    adj[:m, :m] = 1.0
    np.fill_diagonal(adj, 0.0)
    deg = adj.sum(axis=1)
    for new in range(m, n):
        w = deg[:new].copy()
        if w.sum() == 0:
            w[:] = 1.0
        targets = rng.choice(new, size=m, replace=False, p=w / w.sum())
        adj[new, targets] = adj[targets, new] = 1.0
        deg[targets] += 1.0
        deg[new] = m
    return adj


def gen_ws(n, k, p, rng):
    """Watts–Strogatz: ring lattice with ``k`` neighbours, each edge rewired with prob ``p``."""
    if k % 2 or not 0 < k < n:
        raise ValueError(f"k must be even and in (0, n), got {k}")
    _check_prob("rewire probability", p)
    adj = np.zeros((n, n), dtype=bool)
    nodes = np.arange(n)
    for j in range(1, k // 2 + 1):
        adj[nodes, (nodes + j) % n] = True
        adj[(nodes + j) % n, nodes] = True
    for j in range(1, k // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            if rng.random() >= p or not adj[u, v]:
                continue
            if adj[u].sum() >= n - 1:
                continue
            w = int(rng.integers(n))
            while w == u or adj[u, w]:
                w = int(rng.integers(n))
            adj[u, v] = adj[v, u] = False
            adj[u, w] = adj[w, u] = True
    return adj.astype(np.float64)


# ---------------------------------------------------------------------------
# node2vec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Node2VecConfig:
    dim: int = 8
    walk_length: int = 51
    num_walks: int = 100
    p: float = 1.0
    q: float = 1.0
    window: int = 10
    negative: int = 5
    alpha: float = 0.025
    min_alpha: float = 0.0001


def node2vec_embed(topology, cfg=Node2VecConfig(), seed=0):
    """Skip-gram embeddings of biased random walks over the binary topology."""
    adj = np.asarray(topology) > 0
    np.fill_diagonal(adj, False)
    n = adj.shape[0]
    rows, cols = np.nonzero(adj)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    seed = int(seed) & ((1 << 63) - 1)
    walks = kernels.node2vec_walks(indptr, cols.astype(np.int64),
                                   np.ascontiguousarray(adj, dtype=np.uint8), cfg.num_walks,
                                   cfg.walk_length, cfg.p, cfg.q, seed)
    return kernels.sgns_train(walks, n, cfg.dim, cfg.window, cfg.negative, cfg.alpha,
                              cfg.min_alpha, seed ^ 0x5DEECE66D)


def weight_edges_pearson(features):
    """Dense weighted adjacency ``(r_ij + 1) / 2`` from row-wise Pearson correlation."""
    x = np.asarray(features, dtype=np.float64)
    centred = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred * centred).sum(axis=1))
    flat = np.flatnonzero(norms <= 1e-12 * max(1.0, np.abs(x).max(initial=0.0)))
    if len(flat):
        raise GraphError(f"node {flat[0]} has zero feature variance")
    unit = centred / norms[:, None]
    r = np.clip(unit @ unit.T, -1.0, 1.0)
    a = (r + 1.0) / 2.0
    np.fill_diagonal(a, 0.0)
    return a


# ---------------------------------------------------------------------------
# super-resolution scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SrScenario:
    """One (family, pooling metric) dataset recipe.

    Generator ranges are inclusive and drawn uniformly per sample.
    """

    family: str
    pooling: str
    n_h: int = 64
    n_l: int = 32
    n_samples: int = 128
    clusters: tuple = (2, 5)
    p_in: tuple = (0.50, 0.60)
    p_out: tuple = (0.01, 0.10)
    ba_edges: tuple = (4, 8)
    ws_neighbors: tuple = (4, 8)
    ws_rewire: tuple = (0.2, 0.5)
    hr_walk_length: int = 51
    lr_walk_length: int = 26
    embedding: Node2VecConfig = field(default_factory=Node2VecConfig)

    def __post_init__(self):
        fam = self.family.upper()
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if self.pooling not in POOLING:
            raise ValueError(f"unknown pooling metric {self.pooling!r}")
        if not 1 <= self.n_l <= self.n_h:
            raise ValueError(f"need 1 <= n_l <= n_h, got {self.n_l}, {self.n_h}")
        for name in ("clusters", "p_in", "p_out", "ba_edges", "ws_neighbors", "ws_rewire"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")

    @property
    def name(self):
        return f"{self.family.lower()}-{self.pooling}"

    @classmethod
    def from_name(cls, name, **kw):
        fam, _, pool = name.partition("-")
        return cls(fam, pool, **kw)


def draw_generator_params(scenario, rng):
    s = scenario
    if s.family == "SBM":
        return {"clusters": int(rng.integers(s.clusters[0], s.clusters[1] + 1)),
                "p_in": float(rng.uniform(*s.p_in)), "p_out": float(rng.uniform(*s.p_out))}
    if s.family == "BA":
        return {"m": int(rng.integers(s.ba_edges[0], s.ba_edges[1] + 1))}
    ks = [k for k in range(s.ws_neighbors[0], s.ws_neighbors[1] + 1) if k % 2 == 0]
    if not ks:
        raise ValueError("WS neighbour range has no even value")
    return {"k": int(ks[rng.integers(len(ks))]), "p": float(rng.uniform(*s.ws_rewire))}


def generate_topology(family, n, params, rng):
    if family == "SBM":
        return gen_sbm(n, params["clusters"], params["p_in"], params["p_out"], rng)
    if family == "BA":
        return gen_ba(n, params["m"], rng)
    return gen_ws(n, params["k"], params["p"], rng)


def pooling_scores(g, metric):
    """Node scores for TopK pooling, computed on the weighted graph."""
    from gsr import metrics
    fn = {"degree": metrics.degree_strength, "betweenness": metrics.betweenness,
          "clustering": metrics.clustering_coefficients,
          "participation": metrics.participation}[metric]
    return fn(g)


@dataclass(frozen=True, eq=False)
class SrSamplePair:
    lr: WeightedGraph
    hr: WeightedGraph
    kept: np.ndarray
    params: dict


def make_sr_sample(scenario, seed):
    """Generate one (LR, HR) pair; deterministic per ``(scenario, seed)``."""
    s = scenario
    rng = np.random.default_rng(seed)
    params = draw_generator_params(s, rng)
    topo = generate_topology(s.family, s.n_h, params, rng)
    stream = rng.integers(0, 2**62, size=2)
    hr_feats = node2vec_embed(topo, replace(s.embedding, walk_length=s.hr_walk_length), stream[0])
    hr = WeightedGraph(weight_edges_pearson(hr_feats), hr_feats)
    _, kept = topk_pool(hr, pooling_scores(hr, s.pooling), s.n_l)
    lr_topo = topo[np.ix_(kept, kept)]
    lr_feats = node2vec_embed(lr_topo, replace(s.embedding, walk_length=s.lr_walk_length), stream[1])
    lr = WeightedGraph(hr.adjacency[np.ix_(kept, kept)], lr_feats)
    return SrSamplePair(lr, hr, kept, params)


def sample_seed(run_seed, index):
    """Per-sample seed derived from the run seed and sample index."""
    return [int(run_seed), int(index)]


# ---------------------------------------------------------------------------
# interacting particles
# ---------------------------------------------------------------------------

PARTICLE_DATASETS = ("D1", "D2", "D3")
EDGE_FUNCTIONS = ("E1", "E2", "E3", "E4", "E5")


@dataclass(frozen=True)
class EdgeConstants:
    G: float = None
    A: float = 10.0
    B: float = -7.0
    threshold: float = 0.3

    def gravity(self, dataset):
        if self.G is not None:
            return self.G
        return 100.0 if dataset == "D1" else 1.0


def edge_value(fn, xi, yi, mi, xj, yj, mj, G=1.0, A=10.0, B=-7.0):
    """Analytic value of edge function ``fn`` on the ordered pair (i, j)."""
    if fn == "E1":
        return G * mi * mj / ((xi - xj) ** 2 + (yi - yj) ** 2)
    if fn == "E2":
        return (A * mi + B * mj) / (xi ** 2 + yj ** 2)
    if fn == "E3":
        return (xi - xj) ** 2 + (yi - yj) ** 2 + (mi - mj) ** 2
    if fn == "E4":
        return xi * yi * mi + xj * yj * mj + xi * yj + xj * yi
    if fn == "E5":
        return xi ** 2 + yi ** 2 + mj ** 2
    raise ValueError(f"unknown edge function {fn!r}")


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Particles ``(x, y, m)`` with directed edges (both orientations) and edge values."""

    features: np.ndarray
    edges: np.ndarray
    values: np.ndarray


def grid_edges(side):
    pairs = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                pairs.append((i, i + 1))
            if r + 1 < side:
                pairs.append((i, i + side))
    return np.array(pairs, dtype=np.int64)


def gen_particles(dataset, edge_fn, constants=EdgeConstants(), seed=0, n=16):
    if dataset not in PARTICLE_DATASETS:
        raise ValueError(f"unknown particle dataset {dataset!r}")
    if edge_fn not in EDGE_FUNCTIONS:
        raise ValueError(f"unknown edge function {edge_fn!r}")
    rng = np.random.default_rng(seed)
    if dataset == "D1":
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise ValueError(f"grid dataset needs a square node count, got {n}")
        rr, cc = np.divmod(np.arange(n), side)
        pos = np.stack([cc, rr], axis=1).astype(np.float64)
        mass = rng.uniform(0.0, 1.0, n)
        und = grid_edges(side)
    else:
        pos = rng.uniform(0.0, 1.0, (n, 2))
        mass = np.ones(n) if dataset == "D2" else rng.uniform(0.0, 1.0, n)
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        iu, ju = np.triu_indices(n, 1)
        close = dist[iu, ju] <= constants.threshold
        und = np.stack([iu[close], ju[close]], axis=1)
    edges = np.concatenate([und, und[:, ::-1]]) if len(und) else np.zeros((0, 2), np.int64)
    feats = np.column_stack([pos, mass])
    i, j = edges[:, 0], edges[:, 1]
    vals = edge_value(edge_fn, feats[i, 0], feats[i, 1], feats[i, 2],
                      feats[j, 0], feats[j, 1], feats[j, 2],
                      G=constants.gravity(dataset), A=constants.A, B=constants.B)
    return ParticleSystem(feats, edges.astype(np.int64), np.asarray(vals, dtype=np.float64))


# ---------------------------------------------------------------------------
# connectome-shaped data
# ---------------------------------------------------------------------------

def load_connectome_pair(lr_path, hr_path, rescale=False):
    """Load an LR/HR matrix pair; node features are the adjacency rows."""
    out = []
    for path in (lr_path, hr_path):
        a = load_matrix(path)
        check_symmetric(a, 1e-6, str(path))
        if rescale:
            off = ~np.eye(len(a), dtype=bool)
            lo, hi = a[off].min(), a[off].max()
            a = np.where(off, (a - lo) / (hi - lo) if hi > lo else 0.0, 0.0)
        np.fill_diagonal(a, 0.0)
        if a.min() < 0.0 or a.max() > 1.0:
            i, j = np.unravel_index(np.argmax((a < 0) | (a > 1)), a.shape)
            raise GraphError(f"{path}: entry outside [0, 1] at row {i}, col {j}")
        out.append(WeightedGraph(a, a))
    return out[0], out[1]


def connectome_standins(n_subjects, n_l=160, n_h=268, seed=0, timepoints=120, factors=8):
    """Synthetic connectome-like pairs from latent-factor time series.

    HR regions mix shared latent factors plus noise; each LR region averages a
    contiguous group of HR regions.  Both graphs are ``(r + 1) / 2`` of the
    region correlations, with node features equal to adjacency rows.
    """
    if not 1 <= n_l <= n_h:
        raise ValueError(f"need 1 <= n_l <= n_h, got {n_l}, {n_h}")
    rng = np.random.default_rng(seed)
    loadings = rng.normal(size=(n_h, factors))
    groups = np.array_split(np.arange(n_h), n_l)
    pairs = []
    for _ in range(n_subjects):
        z = rng.normal(size=(factors, timepoints))
        own = loadings + 0.3 * rng.normal(size=loadings.shape)
        sig = own @ z + rng.normal(size=(n_h, timepoints))
        lr_sig = np.stack([sig[g].mean(axis=0) for g in groups])
        hr_a = (np.corrcoef(sig) + 1.0) / 2.0
        lr_a = (np.corrcoef(lr_sig) + 1.0) / 2.0
        np.fill_diagonal(hr_a, 0.0)
        np.fill_diagonal(lr_a, 0.0)
        hr_a = np.clip(0.5 * (hr_a + hr_a.T), 0.0, 1.0)
        lr_a = np.clip(0.5 * (lr_a + lr_a.T), 0.0, 1.0)
        pairs.append(SrSamplePair(WeightedGraph(lr_a, lr_a), WeightedGraph(hr_a, hr_a), None, {}))
    return pairs


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_dataset(directory, pairs, header):
    """Write ``sample_<k>_lr.txt``/``_hr.txt`` (+ LR features) and a text manifest.

    ``header`` is a mapping echoed into the manifest; each pair may carry a
    ``params`` dict that is recorded per sample.
    """
    os.makedirs(directory, exist_ok=True)
    lines = [f"{k}={v}" for k, v in header.items()]
    lines.append(f"n_samples={len(pairs)}")
    for k, pair in enumerate(pairs):
        lr, hr = pair.lr, pair.hr
        save_matrix(os.path.join(directory, f"sample_{k}_lr.txt"), lr.adjacency)
        save_matrix(os.path.join(directory, f"sample_{k}_hr.txt"), hr.adjacency)
        save_matrix(os.path.join(directory, f"sample_{k}_lr_features.txt"), lr.features)
        params = getattr(pair, "params", None) or {}
        kept = getattr(pair, "kept", None)
        extra = " ".join(f"{p}={params[p]!r}" for p in sorted(params))
        if kept is not None:
            extra += " kept=" + ",".join(str(int(i)) for i in kept)
        lines.append(f"sample_{k}: {extra}".rstrip())
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_features(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.split()])
    return np.array(rows, dtype=np.float64)


def read_dataset(directory):
    """Load every sample pair of a dataset directory, in sample order."""
    manifest = os.path.join(directory, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"{directory}: no {MANIFEST}")
    header = {}
    with open(manifest) as fh:
        for line in fh:
            if "=" in line and not line.startswith("sample_"):
                k, v = line.rstrip("\n").split("=", 1)
                header[k] = v
    pairs = []
    for k in range(int(header["n_samples"])):
        base = os.path.join(directory, f"sample_{k}")
        lr_a, hr_a = load_matrix(base + "_lr.txt"), load_matrix(base + "_hr.txt")
        feat_path = base + "_lr_features.txt"
        lr_x = _load_features(feat_path) if os.path.exists(feat_path) else lr_a
        pairs.append(SrSamplePair(WeightedGraph(lr_a, lr_x), WeightedGraph(hr_a, hr_a), None, {}))
    return header, pairs


def generate_scenario(scenario, seed, n_samples=None):
    n = scenario.n_samples if n_samples is None else n_samples
    return [make_sr_sample(scenario, sample_seed(seed, k)) for k in range(n)]


def scenario_header(scenario, seed):
    d = asdict(scenario)
    emb = d.pop("embedding")
    d.update({f"node2vec_{k}": v for k, v in emb.items()})
    return {"scenario": scenario.name, "seed": seed, **d}
