"""Super-resolution model zoo: node super-resolution variants, edge inference
variants, their compositions, the autoencoder baseline and the toy
node/edge models for the particle experiments."""

from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from gsr import diffmath as dm
from gsr.diffmath import DiffArray
from gsr.gnn import (FeedForward, GraphTransformerLayer, Linear, Module, Neighborhood,
                     complete_neighborhood, dot_edge_init, learned_domain, minmax_normalize,
                     weighted_neighborhood)
from gsr.graphcore import GraphError, WeightedGraph, bipartite_csr, build_dual

SV_KINDS = ("MT", "Bi-LC", "Bi-MP")
REFINEMENTS = ("none", "fixed", "learned")
SE_KINDS = ("dot", "dual")


def _model_names():
    names = []
    for se in SE_KINDS:
        prefix = "Dual-" if se == "dual" else ""
        names.append(prefix + "MT")
        for sv in ("Bi-LC", "Bi-MP"):
            for ref in REFINEMENTS:
                names.append(prefix + sv + ("" if ref == "none" else "_" + ref))
    return tuple(names)


#: the fourteen S_E ∘ S_V compositions, in table order
MODEL_NAMES = _model_names()
BASELINE_NAMES = ("Autoencoder", "IMAN_adapted")
BIMP_FAMILY = tuple(n for n in MODEL_NAMES if "Bi-MP" in n)


@dataclass(frozen=True)
class ModelSpec:
    """Which S_V, refinement and S_E to compose, plus sizes.

    ``lr_refine=None`` means the default: on for MT (it needs the width-``n_h``
    LR GNN), off for the bipartite variants.
    """

    sv_kind: str
    refinement: str = "none"
    se_kind: str = "dot"
    n_l: int = 32
    n_h: int = 64
    in_dim: int = 8
    hidden: int = 16
    heads: int = 4
    dropout: float = 0.2
    lr_refine: object = None
    hr_init_scale: float = 1.0

    def __post_init__(self):
        if self.sv_kind not in SV_KINDS:
            raise ValueError(f"unknown node super-resolution kind {self.sv_kind!r}")
        if self.refinement not in REFINEMENTS:
            raise ValueError(f"unknown refinement {self.refinement!r}")
        if self.se_kind not in SE_KINDS:
            raise ValueError(f"unknown edge inference kind {self.se_kind!r}")
        if self.sv_kind == "MT":
            object.__setattr__(self, "refinement", "none")
            object.__setattr__(self, "lr_refine", True)
        elif self.lr_refine is None:
            object.__setattr__(self, "lr_refine", False)
        if self.n_l < 1 or self.n_h < 2:
            raise ValueError("need n_l >= 1 and n_h >= 2")
        if self.hr_init_scale <= 0:
            raise ValueError("hr_init_scale must be positive")

    @property
    def name(self):
        base = self.sv_kind + ("" if self.refinement == "none" else "_" + self.refinement)
        return ("Dual-" if self.se_kind == "dual" else "") + base

    @classmethod
    def from_name(cls, name, **dims):
        if name in BASELINE_NAMES:
            raise ValueError(f"{name} is a baseline, not a composed model")
        se = "dot"
        if name.startswith("Dual-"):
            se, name = "dual", name[len("Dual-"):]
        sv, _, ref = name.partition("_")
        return cls(sv, ref or "none", se, **dims)


class HrInit(Module):
    """Frozen random HR node features ``U(0, scale)`` shared by every sample."""

    def __init__(self, n_h, dim, scale, rng):
        self.x_h0 = DiffArray(rng.uniform(0.0, scale, size=(n_h, dim)))


class LinearCombiner(Module):
    """HR features as ``W_b X_l`` (no bias)."""

    def __init__(self, n_h, n_l, rng):
        limit = np.sqrt(6.0 / (n_h + n_l))
        self.w_b = DiffArray(rng.uniform(-limit, limit, size=(n_h, n_l)), requires_grad=True)

    def __call__(self, x_l):
        if self.w_b.cols != x_l.rows:
            raise dm.ShapeError(f"combiner expects {self.w_b.cols} LR nodes, got {x_l.rows}")
        return dm.matmul(self.w_b, x_l)


@dataclass(frozen=True, eq=False)
class SrSample:
    """One (LR, HR) pair prepared for training: constant inputs plus cached structure."""

    lr: WeightedGraph
    hr: WeightedGraph

    def __post_init__(self):
        if self.lr.features.shape[1] == 0:
            raise GraphError("LR graph needs node features")
        object.__setattr__(self, "x_l", DiffArray(self.lr.features))
        object.__setattr__(self, "lr_nbhd", Neighborhood.from_adjacency(
            self.lr.adjacency, self_loops=True, weighted=True))
        iu, ju = np.triu_indices(self.hr.n, 1)
        object.__setattr__(self, "upper_index", iu * self.hr.n + ju)
        object.__setattr__(self, "hr_upper", DiffArray(self.hr.adjacency[iu, ju][:, None]))
        iu, ju = np.triu_indices(self.lr.n, 1)
        object.__setattr__(self, "lr_upper_index", iu * self.lr.n + ju)
        object.__setattr__(self, "lr_upper", DiffArray(self.lr.adjacency[iu, ju][:, None]))


def upper_mae(pred, upper_index, target_upper):
    """MAE between a dense prediction and targets over the strict upper triangle."""
    n = pred.rows
    flat = dm.reshape(pred, n * n, 1)
    return dm.mae_loss(dm.gather_rows(flat, upper_index), target_upper)


def se_dot(xh):
    """Edge inference by min-max-normalised Gram matrix."""
    return minmax_normalize(dm.matmul(xh, dm.transpose(xh)))


class DualEdgeInference(Module):
    """Edge inference on the dual graph of K_{n_h}.

    Dot-product edge features become dual-node features, a graph transformer
    layer runs over the dual graph, an affine head yields one scalar per dual
    node, and the scalars are scattered back to a symmetric matrix.
    """

    def __init__(self, hidden, heads, rng, dropout=0.0):
        self.gnn_d = GraphTransformerLayer(1, hidden, heads, rng, dropout)
        self.edge_head = Linear(hidden, 1, rng)

    def __call__(self, xh, training=False, rng=None, bypass=False):
        return se_dual(xh, None if bypass else self, training, rng)


def _dual_nbhd(n):
    dual = build_dual(n)
    indptr, indices = dual.with_self_loops()
    return dual, Neighborhood(indptr, indices)


def se_dual(xh, net=None, training=False, rng=None):
    """Dual-graph edge inference; ``net=None`` skips the dual GNN (identity stub)."""
    n = xh.rows
    if n < 2:
        raise GraphError(f"dual edge inference needs at least 2 HR nodes, got {n}")
    dual, nbhd = _dual_nbhd(n)
    upper = dual.flat_upper_index()
    lower = dual.pairs[:, 1] * n + dual.pairs[:, 0]
    e = dot_edge_init(xh)
    x_d = dm.gather_rows(dm.reshape(e, n * n, 1), upper)
    if net is not None:
        h = net.gnn_d(x_d, nbhd, training=training, rng=rng)
        x_d = net.edge_head(h)
    both = dm.concat_rows(x_d, x_d)
    flat = dm.scatter_add_rows(both, np.concatenate([upper, lower]), n * n)
    return minmax_normalize(dm.reshape(flat, n, n))


class SRModel(Module):
    """``S_E ∘ S_V`` composed from a :class:`ModelSpec`."""

    def __init__(self, spec, seed=0):
        self.spec = spec
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self._dropout_rng = np.random.default_rng([self.seed, 1])
        s = spec
        width = s.in_dim
        if s.lr_refine:
            lr_width = s.n_h if s.sv_kind == "MT" else s.hidden
            self.gnn_l = GraphTransformerLayer(width, lr_width, s.heads, rng, s.dropout)
            width = lr_width
        d_lr = width
        if s.sv_kind == "MT":
            width = s.n_l
        elif s.sv_kind == "Bi-LC":
            self.combiner = LinearCombiner(s.n_h, s.n_l, rng)
        if s.sv_kind == "Bi-MP" or s.refinement == "learned":
            self.hr_init = HrInit(s.n_h, d_lr, s.hr_init_scale, rng)
        if s.sv_kind == "Bi-MP":
            self.gnn_b = GraphTransformerLayer(d_lr, s.hidden, s.heads, rng, s.dropout)
            width = s.hidden
        if s.refinement == "learned":
            self.gnn_xref = GraphTransformerLayer(d_lr, s.hidden, s.heads, rng, s.dropout)
        if s.refinement != "none":
            self.gnn_ref = GraphTransformerLayer(width, s.hidden, s.heads, rng, s.dropout)
            width = s.hidden
        self.feature_width = width
        if s.se_kind == "dual":
            self.edge_net = DualEdgeInference(s.hidden, s.heads, rng, s.dropout)

    @property
    def name(self):
        return self.spec.name

    def _bipartite(self, layer, x_l, training):
        s = self.spec
        indptr, indices = bipartite_csr(x_l.rows, s.n_h, True)
        stacked = dm.concat_rows(x_l, self.hr_init.x_h0)
        if stacked.cols != x_l.cols:
            raise dm.ShapeError("LR and HR feature widths differ")
        out = layer(stacked, Neighborhood(indptr, indices), training=training, rng=self._dropout_rng)
        return dm.slice_rows(out, x_l.rows, x_l.rows + s.n_h)

    def node_features(self, x_l, lr_nbhd, training=False):
        """Inferred HR node features (the S_V part, including refinement)."""
        s = self.spec
        rng = self._dropout_rng
        if x_l.cols != s.in_dim:
            raise dm.ShapeError(f"expected {s.in_dim} LR feature columns, got {x_l.cols}")
        if s.lr_refine:
            x_l = self.gnn_l(x_l, lr_nbhd, training=training, rng=rng)
        if s.sv_kind == "MT":
            xh = dm.transpose(x_l)
        elif s.sv_kind == "Bi-LC":
            xh = self.combiner(x_l)
        else:
            xh = self._bipartite(self.gnn_b, x_l, training)
        if s.refinement == "fixed":
            xh = self.gnn_ref(xh, complete_neighborhood(s.n_h), training=training, rng=rng)
        elif s.refinement == "learned":
            x_ref = self._bipartite(self.gnn_xref, x_l, training)
            xh = hr_refine(xh, "learned", self.gnn_ref, x_ref, training, rng)
        return xh

    def forward(self, sample, training=False):
        xh = self.node_features(sample.x_l, sample.lr_nbhd, training)
        if self.spec.se_kind == "dual":
            return self.edge_net(xh, training, self._dropout_rng)
        return se_dot(xh)

    def loss(self, sample, training=False):
        return upper_mae(self.forward(sample, training), sample.upper_index, sample.hr_upper)

    def predict(self, sample):
        return self.forward(sample, training=False).value


def hr_refine(xh, mode, layer, x_ref=None, training=False, rng=None):
    """Message passing among HR nodes over the fixed (``1 - I``) or learned domain."""
    n = xh.rows
    if mode == "fixed":
        return layer(xh, complete_neighborhood(n), training=training, rng=rng)
    if mode != "learned":
        raise ValueError(f"unknown refinement mode {mode!r}")
    if x_ref is None:
        raise ValueError("learned refinement needs X_ref features")
    a_ref, _ = learned_domain(x_ref)
    return layer(xh, weighted_neighborhood(a_ref), training=training, rng=rng)


class Autoencoder(Module):
    """Encoder predicts HR from LR (Bi-MP + dot edges); a mirrored bipartite
    decoder maps the HR features back to LR nodes to reconstruct the LR graph."""

    name = "Autoencoder"

    def __init__(self, spec, seed=0):
        self.spec = spec
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self._dropout_rng = np.random.default_rng([self.seed, 1])
        s = spec
        self.hr_init = HrInit(s.n_h, s.in_dim, s.hr_init_scale, rng)
        self.gnn_b = GraphTransformerLayer(s.in_dim, s.hidden, s.heads, rng, s.dropout)
        self.lr_init = DiffArray(rng.uniform(0.0, s.hr_init_scale, size=(s.n_l, s.hidden)))
        self.gnn_dec = GraphTransformerLayer(s.hidden, s.hidden, s.heads, rng, s.dropout)

    def encode(self, x_l, training=False):
        s = self.spec
        indptr, indices = bipartite_csr(x_l.rows, s.n_h, True)
        out = self.gnn_b(dm.concat_rows(x_l, self.hr_init.x_h0), Neighborhood(indptr, indices),
                         training=training, rng=self._dropout_rng)
        return dm.slice_rows(out, x_l.rows, x_l.rows + s.n_h)

    def decode(self, xh, training=False):
        s = self.spec
        indptr, indices = bipartite_csr(s.n_h, s.n_l, True)
        out = self.gnn_dec(dm.concat_rows(xh, self.lr_init), Neighborhood(indptr, indices),
                           training=training, rng=self._dropout_rng)
        return dm.slice_rows(out, s.n_h, s.n_h + s.n_l)

    def forward_both(self, sample, training=False):
        xh = self.encode(sample.x_l, training)
        return se_dot(xh), se_dot(self.decode(xh, training))

    def forward(self, sample, training=False):
        return self.forward_both(sample, training)[0]

    def loss(self, sample, training=False):
        a_h, a_l = self.forward_both(sample, training)
        return dm.add(upper_mae(a_h, sample.upper_index, sample.hr_upper),
                      upper_mae(a_l, sample.lr_upper_index, sample.lr_upper))

    def predict(self, sample):
        return self.forward(sample).value


def build_model(name, seed=0, **dims):
    """Instantiate any composed model, the autoencoder, or fail for the IMAN slot."""
    if name == "IMAN_adapted":
        raise NotImplementedError("IMAN_adapted is not implemented")
    if name == "Autoencoder":
        return Autoencoder(ModelSpec("Bi-MP", **dims), seed)
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES + BASELINE_NAMES)}")
    return SRModel(ModelSpec.from_name(name, **dims), seed)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "gsr-checkpoint 1"


def save_checkpoint(model, path):
    """Text checkpoint: header, model spec, then ``param|buffer name rows cols`` blocks."""
    spec = asdict(model.spec)
    with open(path, "w") as fh:
        fh.write(_CKPT_MAGIC + "\n")
        fh.write(f"model {model.name}\n")
        fh.write(f"seed {model.seed}\n")
        for key, val in spec.items():
            fh.write(f"spec {key} {val!r}\n")
        for kind, items in (("param", model.named_parameters()), ("buffer", model.named_buffers())):
            for name, arr in items.items():
                r, c = arr.shape
                fh.write(f"{kind} {name} {r} {c}\n")
                for row in arr.value:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_checkpoint(path):
    import ast
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    name = lines[1].split(" ", 1)[1]
    seed = int(lines[2].split()[1])
    spec_kw = {}
    pos = 3
    while pos < len(lines) and lines[pos].startswith("spec "):
        _, key, val = lines[pos].split(" ", 2)
        spec_kw[key] = ast.literal_eval(val)
        pos += 1
    valid = {f.name for f in fields(ModelSpec)}
    spec = ModelSpec(**{k: v for k, v in spec_kw.items() if k in valid})
    model = Autoencoder(spec, seed) if name == "Autoencoder" else SRModel(spec, seed)
    targets = {**model.named_parameters(), **model.named_buffers()}
    while pos < len(lines):
        kind, key, r, c = lines[pos].split()
        r, c = int(r), int(c)
        block = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + r]])
        if key not in targets or targets[key].shape != (r, c):
            raise ValueError(f"{path}: unexpected entry {key} with shape {(r, c)}")
        targets[key].value[...] = block.reshape(r, c)
        pos += 1 + r
    return model


# ---------------------------------------------------------------------------
# toy node/edge models for the particle experiments
# ---------------------------------------------------------------------------

TOY_MODELS = ("Node", "Node Large", "Edge", "Dual Edge")


@dataclass(frozen=True, eq=False)
class ToyBatch:
    """Several particle graphs stacked into one disjoint union.

    ``edges`` are directed (both orientations of every undirected edge), with
    node indices into the stacked ``features``; ``targets`` align with them.
    """

    features: np.ndarray
    edges: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError(f"toy features must be n×3 (x, y, m), got {x.shape}")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= x.shape[0]):
            raise IndexError("edge endpoint out of range")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.float64).reshape(-1, 1))

    @classmethod
    def stack(cls, systems):
        feats, edges, targets = [], [], []
        offset = 0
        for s in systems:
            feats.append(s.features)
            edges.append(s.edges + offset)
            targets.append(s.values)
            offset += len(s.features)
        return cls(np.vstack(feats), np.vstack(edges), np.concatenate(targets))

    def adjacency(self):
        n = len(self.features)
        e = self.edges
        return sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))

    def dual_sum_matrix(self):
        """Sparse map taking canonical edge features to ``e'_ij + Σ_{dual nbrs} e'_kl``.

        Row ``r`` (directed edge i→j) selects itself plus every canonical
        (k<l) undirected edge sharing exactly one endpoint with {i, j}.
        """
        e = self.edges
        canon = np.sort(e, axis=1)
        uniq, inverse = np.unique(canon, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        n = len(self.features)
        inc = sp.csr_matrix((np.ones(2 * len(uniq)),
                             (np.concatenate([uniq[:, 0], uniq[:, 1]]),
                              np.tile(np.arange(len(uniq)), 2))), shape=(n, len(uniq)))
        # edges touching i or j, counted once each; the edge itself is counted twice
        touch = inc[e[:, 0]] + inc[e[:, 1]]
        touch = touch.tocsr()
        touch.data[:] = 1.0
        own = sp.csr_matrix((np.ones(len(e)), (np.arange(len(e)), inverse)), shape=touch.shape)
        nbr = (touch - own).tocsr()
        nbr.eliminate_zeros()
        return nbr, uniq


class ToyModel(Module):
    """One of the four particle-edge regressors."""

    def __init__(self, kind, seed=0):
        if kind not in TOY_MODELS:
            raise ValueError(f"unknown toy model {kind!r}")
        self.kind = kind
        rng = np.random.default_rng(seed)
        if kind == "Node":
            self.f = FeedForward([3, 16, 16], rng)
        elif kind == "Node Large":
            self.f = FeedForward([3, 16, 16, 1], rng)
        else:
            self.f = FeedForward([6, 16, 16, 1], rng)

    def forward(self, batch):
        x = DiffArray(batch.features)
        src, dst = batch.edges[:, 0], batch.edges[:, 1]
        if self.kind in ("Node", "Node Large"):
            # each undirected edge appears once per orientation, so the
            # adjacency row of i lists every neighbour exactly once
            adj = batch.adjacency()
            adj.data[:] = 1.0
            h = self.f(dm.add(x, dm.spmm(adj, x)))
            prod = dm.mul(dm.gather_rows(h, src), dm.gather_rows(h, dst))
            return dm.reduce_sum(prod, axis=1)
        e_dir = dm.concat_cols(dm.gather_rows(x, src), dm.gather_rows(x, dst))
        if self.kind == "Edge":
            return self.f(e_dir)
        nbr, uniq = batch.dual_sum_matrix()
        e_canon = dm.concat_cols(dm.gather_rows(x, uniq[:, 0]), dm.gather_rows(x, uniq[:, 1]))
        return self.f(dm.add(e_dir, dm.spmm(nbr, e_canon)))

    def loss(self, batch):
        return dm.mse_loss(self.forward(batch), DiffArray(batch.targets))

    def mae(self, batch):
        return float(np.mean(np.abs(self.forward(batch).value - batch.targets)))
