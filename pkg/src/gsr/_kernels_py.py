"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

The random streams (splitmix64) and the order of floating-point updates match
the compiled versions, so walks, embeddings and surrogates are identical
across backends.
"""

import math

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    """Tiny deterministic PRNG shared by both kernel backends."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next() >> 11) * (1.0 / 9007199254740992.0)

    def randbelow(self, n):
        r = int(math.floor(self.uniform() * float(n)))
        return n - 1 if r >= n else r


def _close(a, b):
    if a == b:
        return True
    if math.isinf(a) or math.isinf(b):
        return False
    m = max(abs(a), abs(b), 1.0)
    return abs(a - b) <= 1e-12 * m


def _segment_ids(indptr):
    counts = np.diff(indptr)
    return np.repeat(np.arange(len(counts)), counts)


def _segment_sum(values, seg, n_seg):
    out = np.zeros((n_seg,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, seg, values)
    return out


def segment_softmax_forward(s, indptr):
    n_seg = len(indptr) - 1
    seg = _segment_ids(indptr)
    if len(seg) == 0:
        return np.zeros_like(s)
    mx = np.full((n_seg, s.shape[1]), -np.inf)
    np.maximum.at(mx, seg, s)
    ex = np.exp(s - mx[seg])
    tot = _segment_sum(ex, seg, n_seg)
    return ex / tot[seg]


def segment_softmax_backward(alpha, g, indptr):
    n_seg = len(indptr) - 1
    seg = _segment_ids(indptr)
    acc = _segment_sum(alpha * g, seg, n_seg)
    return alpha * (g - acc[seg])


def attention_forward(q, k, v, indptr, indices, w, heads, scale):
    n, dim = q.shape
    dh = dim // heads
    seg = _segment_ids(indptr)
    qe = q[seg].reshape(-1, heads, dh)
    ke = k[indices].reshape(-1, heads, dh)
    logits = (qe * ke).sum(axis=2) * scale
    alpha = segment_softmax_forward(logits, indptr)
    coef = alpha if w is None else alpha * w[:, None]
    msg = (coef[:, :, None] * v[indices].reshape(-1, heads, dh)).reshape(-1, dim)
    out = _segment_sum(msg, seg, n)
    return out, alpha


def attention_backward(q, k, v, indptr, indices, w, heads, scale, alpha, g_out):
    n, dim = q.shape
    dh = dim // heads
    seg = _segment_ids(indptr)
    ge = g_out[seg].reshape(-1, heads, dh)
    ve = v[indices].reshape(-1, heads, dh)
    dot = (ge * ve).sum(axis=2)
    we = np.ones(len(indices)) if w is None else w
    coef = alpha * we[:, None]
    gv = np.zeros_like(v)
    np.add.at(gv, indices, (coef[:, :, None] * ge).reshape(-1, dim))
    gw = None if w is None else (alpha * dot).sum(axis=1)
    gs = segment_softmax_backward(alpha, dot * we[:, None], indptr) * scale
    ke = k[indices].reshape(-1, heads, dh)
    qe = q[seg].reshape(-1, heads, dh)
    gq = _segment_sum((gs[:, :, None] * ke).reshape(-1, dim), seg, n)
    gk = np.zeros_like(k)
    np.add.at(gk, indices, (gs[:, :, None] * qe).reshape(-1, dim))
    return gq, gk, gv, gw


def node2vec_walks(indptr, indices, adj, num_walks, walk_length, p, q, seed):
    rng = SplitMix64(seed)
    n = len(indptr) - 1
    walks = np.zeros((n * num_walks, walk_length), dtype=np.int64)
    order = list(range(n))
    indptr = [int(x) for x in indptr]
    indices = [int(x) for x in indices]
    row = 0
    for _ in range(num_walks):
        for i in range(n - 1, 0, -1):
            t = rng.randbelow(i + 1)
            order[i], order[t] = order[t], order[i]
        for start in order:
            walk = [start]
            for pos in range(1, walk_length):
                cur = walk[-1]
                nbrs = indices[indptr[cur]:indptr[cur + 1]]
                if not nbrs:
                    walk.append(cur)
                    continue
                if pos == 1:
                    walk.append(nbrs[rng.randbelow(len(nbrs))])
                    continue
                prev = walk[-2]
                tot = 0.0
                cum = []
                for x in nbrs:
                    if x == prev:
                        wgt = 1.0 / p
                    elif adj[x, prev]:
                        wgt = 1.0
                    else:
                        wgt = 1.0 / q
                    tot = tot + wgt
                    cum.append(tot)
                u = rng.uniform() * tot
                pick = len(nbrs) - 1
                for e, c in enumerate(cum):
                    if u < c:
                        pick = e
                        break
                walk.append(nbrs[pick])
            walks[row] = walk
            row += 1
    return walks


UNIGRAM_TABLE = 100000


def unigram_table(counts):
    """``table[k]`` = first node whose cumulative ``count**0.75`` exceeds ``(k+0.5)/size * total``."""
    weights = np.array([float(c) ** 0.75 for c in counts])
    tot = 0.0
    for w in weights:
        tot = tot + w
    cum = np.empty(len(weights))
    run = 0.0
    for i, w in enumerate(weights):
        run = run + w
        cum[i] = run
    probe = (np.arange(UNIGRAM_TABLE) + 0.5) / UNIGRAM_TABLE * tot
    table = np.searchsorted(cum, probe, side="right")
    return np.minimum(table, len(weights) - 1).astype(np.int64)


def sgns_train(walks, n_nodes, dim, window, negative, alpha0, min_alpha, seed):
    rng = SplitMix64(seed)
    syn0 = [[0.0] * dim for _ in range(n_nodes)]
    syn1 = [[0.0] * dim for _ in range(n_nodes)]
    if n_nodes == 0 or dim == 0:
        return np.zeros((n_nodes, dim))
    for i in range(n_nodes):
        for c in range(dim):
            syn0[i][c] = (rng.uniform() - 0.5) / dim
    walks = [[int(x) for x in row] for row in walks]
    counts = [0.0] * n_nodes
    for row in walks:
        for node in row:
            counts[node] += 1.0
    table = [int(x) for x in unigram_table(counts)]
    length = len(walks[0]) if walks else 0
    total_words = float(len(walks) * length)
    done = 0.0
    exp = math.exp
    for row in walks:
        for pos in range(length):
            alpha = alpha0 - (alpha0 - min_alpha) * done / total_words
            if alpha < min_alpha:
                alpha = min_alpha
            done = done + 1.0
            center = row[pos]
            reduced = window - rng.randbelow(window)
            lo = max(pos - reduced, 0)
            hi = min(pos + reduced + 1, length)
            for ctx in range(lo, hi):
                if ctx == pos:
                    continue
                l1 = syn0[row[ctx]]
                neu = [0.0] * dim
                for d in range(negative + 1):
                    if d == 0:
                        target = center
                        label = 1.0
                    else:
                        target = table[rng.randbelow(UNIGRAM_TABLE)]
                        if target == center:
                            continue
                        label = 0.0
                    out = syn1[target]
                    f = 0.0
                    for c in range(dim):
                        f = f + l1[c] * out[c]
                    g = (label - 1.0 / (1.0 + exp(-f))) * alpha
                    for c in range(dim):
                        neu[c] = neu[c] + g * out[c]
                    for c in range(dim):
                        out[c] = out[c] + g * l1[c]
                for c in range(dim):
                    l1[c] = l1[c] + neu[c]
    return np.array(syn0, dtype=np.float64).reshape(n_nodes, dim)


def brandes(length):
    """All-pairs Dijkstra distances and raw (directed-sum) betweenness."""
    length = np.asarray(length, dtype=np.float64)
    n = length.shape[0]
    dist = np.full((n, n), np.inf)
    bc = np.zeros(n)
    finite = np.isfinite(length)
    for s in range(n):
        d = dist[s]
        d[s] = 0.0
        done = np.zeros(n, dtype=bool)
        order = []
        for _ in range(n):
            cand = np.where(done, np.inf, d)
            u = int(np.argmin(cand))
            if not np.isfinite(cand[u]):
                break
            done[u] = True
            order.append(u)
            for w in np.nonzero(finite[u] & ~done)[0]:
                nd = d[u] + length[u, w]
                if nd < d[w] and not _close(nd, d[w]):
                    d[w] = nd
        sigma = np.zeros(n)
        delta = np.zeros(n)
        sigma[s] = 1.0
        pred = {}
        for a in range(1, len(order)):
            w = order[a]
            ps = [u for u in order[:a]
                  if finite[u, w] and d[u] < d[w] and _close(d[u] + length[u, w], d[w])]
            pred[w] = ps
            for u in ps:
                sigma[w] = sigma[w] + sigma[u]
        for a in range(len(order) - 1, 0, -1):
            w = order[a]
            for u in pred[w]:
                delta[u] = delta[u] + sigma[u] / sigma[w] * (1.0 + delta[w])
            bc[w] = bc[w] + delta[w]
    return dist, bc


def rewire_undirected(adj, n_attempts, seed):
    """Degree-preserving double-edge swaps; weights travel with their edges."""
    out = np.array(adj, dtype=np.float64, copy=True)
    n = out.shape[0]
    iu, ju = np.nonzero(np.triu(out, 1))
    m = len(iu)
    if m < 2 or m == n * (n - 1) // 2:
        return out
    ei = [int(x) for x in iu]
    ej = [int(x) for x in ju]
    rng = SplitMix64(seed)
    for _ in range(int(n_attempts)):
        e1 = rng.randbelow(m)
        e2 = rng.randbelow(m)
        a, b = ei[e1], ej[e1]
        c, d = ei[e2], ej[e2]
        if rng.uniform() < 0.5:
            c, d = d, c
        if e1 == e2 or a == c or a == d or b == c or b == d:
            continue
        if out[a, d] != 0.0 or out[c, b] != 0.0:
            continue
        w1, w2 = out[a, b], out[c, d]
        out[a, b] = out[b, a] = 0.0
        out[c, d] = out[d, c] = 0.0
        out[a, d] = out[d, a] = w1
        out[c, b] = out[b, c] = w2
        ei[e1], ej[e1] = a, d
        ei[e2], ej[e2] = c, b
    return out
