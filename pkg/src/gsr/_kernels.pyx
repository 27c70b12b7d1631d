# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every function here has a twin in ``_kernels_py`` with the same signature and
the same floating-point operation order, so both backends agree to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, floor, fabs, INFINITY, isinf
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _next(uint64_t* state) nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) nogil:
    return <double>(_next(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t _randbelow(uint64_t* state, int64_t n) nogil:
    cdef int64_t r = <int64_t>floor(_uniform(state) * <double>n)
    if r >= n:
        r = n - 1
    return r


cdef inline bint _close(double a, double b) nogil:
    if a == b:
        return True
    if isinf(a) or isinf(b):
        return False
    cdef double m = fabs(a)
    if fabs(b) > m:
        m = fabs(b)
    if m < 1.0:
        m = 1.0
    return fabs(a - b) <= 1e-12 * m


cdef Py_ssize_t UNIGRAM_TABLE = 100000


# ---------------------------------------------------------------------------
# neighbourhood attention
# ---------------------------------------------------------------------------

def attention_forward(const double[:, ::1] q, const double[:, ::1] k, const double[:, ::1] v,
                      const int64_t[::1] indptr, const int64_t[::1] indices, w,
                      int heads, double scale):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t dim = q.shape[1]
    cdef Py_ssize_t dh = dim // heads
    cdef Py_ssize_t n_edges = indices.shape[0]
    out_arr = np.zeros((n, dim), dtype=np.float64)
    alpha_arr = np.zeros((n_edges, heads), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef const double[::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = w
    cdef Py_ssize_t i, e, h, c, j, off
    cdef double s, mx, tot, a
    with nogil:
        for i in range(n):
            if indptr[i] == indptr[i + 1]:
                continue
            for h in range(heads):
                off = h * dh
                mx = -INFINITY
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    s = 0.0
                    for c in range(dh):
                        s = s + q[i, off + c] * k[j, off + c]
                    s = s * scale
                    alpha[e, h] = s
                    if s > mx:
                        mx = s
                tot = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    a = exp(alpha[e, h] - mx)
                    alpha[e, h] = a
                    tot = tot + a
                for e in range(indptr[i], indptr[i + 1]):
                    alpha[e, h] = alpha[e, h] / tot
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    a = alpha[e, h]
                    if weighted:
                        a = a * wv[e]
                    for c in range(dh):
                        out[i, off + c] = out[i, off + c] + a * v[j, off + c]
    return out_arr, alpha_arr


def attention_backward(const double[:, ::1] q, const double[:, ::1] k, const double[:, ::1] v,
                       const int64_t[::1] indptr, const int64_t[::1] indices, w,
                       int heads, double scale, const double[:, ::1] alpha,
                       const double[:, ::1] g_out):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t dim = q.shape[1]
    cdef Py_ssize_t n_src = k.shape[0]
    cdef Py_ssize_t dh = dim // heads
    cdef Py_ssize_t n_edges = indices.shape[0]
    gq_arr = np.zeros((n, dim), dtype=np.float64)
    gk_arr = np.zeros((n_src, dim), dtype=np.float64)
    gv_arr = np.zeros((n_src, dim), dtype=np.float64)
    gw_arr = np.zeros(n_edges, dtype=np.float64)
    ga_arr = np.zeros(n_edges, dtype=np.float64)
    cdef double[:, ::1] gq = gq_arr
    cdef double[:, ::1] gk = gk_arr
    cdef double[:, ::1] gv = gv_arr
    cdef double[::1] gw = gw_arr
    cdef double[::1] ga = ga_arr
    cdef const double[::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = w
    cdef Py_ssize_t i, e, h, c, j, off
    cdef double dot, we, a, acc, gs
    with nogil:
        for i in range(n):
            for h in range(heads):
                off = h * dh
                acc = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    dot = 0.0
                    for c in range(dh):
                        dot = dot + g_out[i, off + c] * v[j, off + c]
                    we = 1.0
                    if weighted:
                        we = wv[e]
                        gw[e] = gw[e] + alpha[e, h] * dot
                    a = alpha[e, h] * we
                    for c in range(dh):
                        gv[j, off + c] = gv[j, off + c] + a * g_out[i, off + c]
                    ga[e] = we * dot
                    acc = acc + alpha[e, h] * ga[e]
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    gs = alpha[e, h] * (ga[e] - acc) * scale
                    for c in range(dh):
                        gq[i, off + c] = gq[i, off + c] + gs * k[j, off + c]
                        gk[j, off + c] = gk[j, off + c] + gs * q[i, off + c]
    return gq_arr, gk_arr, gv_arr, (gw_arr if weighted else None)


# ---------------------------------------------------------------------------
# segment softmax
# ---------------------------------------------------------------------------

def segment_softmax_forward(const double[:, ::1] s, const int64_t[::1] indptr):
    cdef Py_ssize_t n_seg = indptr.shape[0] - 1
    cdef Py_ssize_t cols = s.shape[1]
    out_arr = np.zeros((s.shape[0], cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, h
    cdef double mx, tot, a
    with nogil:
        for i in range(n_seg):
            if indptr[i] == indptr[i + 1]:
                continue
            for h in range(cols):
                mx = -INFINITY
                for e in range(indptr[i], indptr[i + 1]):
                    if s[e, h] > mx:
                        mx = s[e, h]
                tot = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    a = exp(s[e, h] - mx)
                    out[e, h] = a
                    tot = tot + a
                for e in range(indptr[i], indptr[i + 1]):
                    out[e, h] = out[e, h] / tot
    return out_arr


def segment_softmax_backward(const double[:, ::1] alpha, const double[:, ::1] g,
                             const int64_t[::1] indptr):
    cdef Py_ssize_t n_seg = indptr.shape[0] - 1
    cdef Py_ssize_t cols = alpha.shape[1]
    out_arr = np.zeros((alpha.shape[0], cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, h
    cdef double acc
    with nogil:
        for i in range(n_seg):
            for h in range(cols):
                acc = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    acc = acc + alpha[e, h] * g[e, h]
                for e in range(indptr[i], indptr[i + 1]):
                    out[e, h] = alpha[e, h] * (g[e, h] - acc)
    return out_arr


# ---------------------------------------------------------------------------
# node2vec
# ---------------------------------------------------------------------------

def node2vec_walks(const int64_t[::1] indptr, const int64_t[::1] indices,
                   const cnp.uint8_t[:, ::1] adj, int num_walks, int walk_length,
                   double p, double q, uint64_t seed):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    walks_arr = np.zeros((n * num_walks, walk_length), dtype=np.int64)
    cdef int64_t[:, ::1] walks = walks_arr
    order_arr = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] order = order_arr
    cdef Py_ssize_t max_deg = 1
    cdef Py_ssize_t i
    for i in range(n):
        if indptr[i + 1] - indptr[i] > max_deg:
            max_deg = indptr[i + 1] - indptr[i]
    cum_arr = np.zeros(max_deg, dtype=np.float64)
    cdef double[::1] cum = cum_arr
    cdef uint64_t state = seed
    cdef Py_ssize_t r, t, row, pos, deg, e, x
    cdef int64_t cur, prev, start, tmp
    cdef double tot, u, wgt
    with nogil:
        row = 0
        for r in range(num_walks):
            for i in range(n - 1, 0, -1):
                t = _randbelow(&state, i + 1)
                tmp = order[i]
                order[i] = order[t]
                order[t] = tmp
            for i in range(n):
                start = order[i]
                walks[row, 0] = start
                for pos in range(1, walk_length):
                    cur = walks[row, pos - 1]
                    deg = indptr[cur + 1] - indptr[cur]
                    if deg == 0:
                        walks[row, pos] = cur
                        continue
                    if pos == 1:
                        walks[row, pos] = indices[indptr[cur] + _randbelow(&state, deg)]
                        continue
                    prev = walks[row, pos - 2]
                    tot = 0.0
                    for e in range(deg):
                        x = indices[indptr[cur] + e]
                        if x == prev:
                            wgt = 1.0 / p
                        elif adj[x, prev]:
                            wgt = 1.0
                        else:
                            wgt = 1.0 / q
                        tot = tot + wgt
                        cum[e] = tot
                    u = _uniform(&state) * tot
                    x = deg - 1
                    for e in range(deg):
                        if u < cum[e]:
                            x = e
                            break
                    walks[row, pos] = indices[indptr[cur] + x]
                row = row + 1
    return walks_arr


def sgns_train(const int64_t[:, ::1] walks, int n_nodes, int dim, int window,
               int negative, double alpha0, double min_alpha, uint64_t seed):
    cdef Py_ssize_t n_walks = walks.shape[0]
    cdef Py_ssize_t length = walks.shape[1]
    cdef uint64_t state = seed
    syn0_arr = np.zeros((n_nodes, dim), dtype=np.float64)
    syn1_arr = np.zeros((n_nodes, dim), dtype=np.float64)
    neu_arr = np.zeros(dim, dtype=np.float64)
    cdef double[:, ::1] syn0 = syn0_arr
    cdef double[:, ::1] syn1 = syn1_arr
    cdef double[::1] neu_mv = neu_arr
    cdef double* neu
    counts_arr = np.zeros(n_nodes, dtype=np.float64)
    cdef double[::1] counts = counts_arr
    table_arr = np.zeros(UNIGRAM_TABLE, dtype=np.int64)
    cdef int64_t[::1] table = table_arr
    cdef Py_ssize_t i, c, r, pos, ctx, lo, hi, d, k
    cdef int64_t center, context, target, reduced
    cdef double tot, run, alpha, f, g, label, total_words, done
    cdef double* l1
    cdef double* out
    if n_nodes == 0 or dim == 0:
        return syn0_arr
    neu = &neu_mv[0]
    with nogil:
        for i in range(n_nodes):
            for c in range(dim):
                syn0[i, c] = (_uniform(&state) - 0.5) / dim
        for r in range(n_walks):
            for pos in range(length):
                counts[walks[r, pos]] = counts[walks[r, pos]] + 1.0
        tot = 0.0
        for i in range(n_nodes):
            tot = tot + counts[i] ** 0.75
        # table[k] = first node whose cumulative weight exceeds (k + 0.5) / size * tot
        i = 0
        run = counts[0] ** 0.75
        for k in range(UNIGRAM_TABLE):
            while i < n_nodes - 1 and not ((k + 0.5) / UNIGRAM_TABLE * tot < run):
                i = i + 1
                run = run + counts[i] ** 0.75
            table[k] = i
        total_words = <double>(n_walks * length)
        done = 0.0
        for r in range(n_walks):
            for pos in range(length):
                alpha = alpha0 - (alpha0 - min_alpha) * done / total_words
                if alpha < min_alpha:
                    alpha = min_alpha
                done = done + 1.0
                center = walks[r, pos]
                reduced = window - _randbelow(&state, window)
                lo = pos - reduced
                if lo < 0:
                    lo = 0
                hi = pos + reduced + 1
                if hi > length:
                    hi = length
                for ctx in range(lo, hi):
                    if ctx == pos:
                        continue
                    context = walks[r, ctx]
                    l1 = &syn0[context, 0]
                    for c in range(dim):
                        neu[c] = 0.0
                    for d in range(negative + 1):
                        if d == 0:
                            target = center
                            label = 1.0
                        else:
                            target = table[_randbelow(&state, UNIGRAM_TABLE)]
                            if target == center:
                                continue
                            label = 0.0
                        out = &syn1[target, 0]
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
    return syn0_arr


# ---------------------------------------------------------------------------
# shortest paths
# ---------------------------------------------------------------------------

def brandes(const double[:, ::1] length):
    """All-pairs Dijkstra distances and raw (directed-sum) betweenness."""
    cdef Py_ssize_t n = length.shape[0]
    dist_arr = np.full((n, n), np.inf, dtype=np.float64)
    bc_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dist = dist_arr
    cdef double[::1] bc = bc_arr
    sigma_arr = np.zeros(n, dtype=np.float64)
    delta_arr = np.zeros(n, dtype=np.float64)
    order_arr = np.zeros(n, dtype=np.int64)
    done_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] sigma = sigma_arr
    cdef double[::1] delta = delta_arr
    cdef int64_t[::1] order = order_arr
    cdef cnp.uint8_t[::1] done = done_arr
    cdef Py_ssize_t s, it, u, w, a, b, cnt
    cdef double best, nd
    with nogil:
        for s in range(n):
            for u in range(n):
                done[u] = 0
                sigma[u] = 0.0
                delta[u] = 0.0
            dist[s, s] = 0.0
            cnt = 0
            for it in range(n):
                u = -1
                best = INFINITY
                for w in range(n):
                    if not done[w] and dist[s, w] < best:
                        best = dist[s, w]
                        u = w
                if u < 0:
                    break
                done[u] = 1
                order[cnt] = u
                cnt = cnt + 1
                for w in range(n):
                    if done[w] or length[u, w] == INFINITY:
                        continue
                    nd = dist[s, u] + length[u, w]
                    if nd < dist[s, w] and not _close(nd, dist[s, w]):
                        dist[s, w] = nd
            sigma[s] = 1.0
            for a in range(1, cnt):
                w = order[a]
                for b in range(a):
                    u = order[b]
                    if length[u, w] != INFINITY and dist[s, u] < dist[s, w] \
                            and _close(dist[s, u] + length[u, w], dist[s, w]):
                        sigma[w] = sigma[w] + sigma[u]
            for a in range(cnt - 1, 0, -1):
                w = order[a]
                for b in range(a):
                    u = order[b]
                    if length[u, w] != INFINITY and dist[s, u] < dist[s, w] \
                            and _close(dist[s, u] + length[u, w], dist[s, w]):
                        delta[u] = delta[u] + sigma[u] / sigma[w] * (1.0 + delta[w])
                bc[w] = bc[w] + delta[w]
    return dist_arr, bc_arr


def rewire_undirected(const double[:, ::1] adj, int64_t n_attempts, uint64_t seed):
    """Degree-preserving double-edge swaps; weights travel with their edges."""
    cdef Py_ssize_t n = adj.shape[0]
    out_arr = np.array(adj, dtype=np.float64, copy=True)
    cdef double[:, ::1] out = out_arr
    iu, ju = np.nonzero(np.triu(out_arr, 1))
    cdef Py_ssize_t m = iu.shape[0]
    if m < 2 or m == n * (n - 1) // 2:
        return out_arr
    ei_arr = np.ascontiguousarray(iu, dtype=np.int64)
    ej_arr = np.ascontiguousarray(ju, dtype=np.int64)
    cdef int64_t[::1] ei = ei_arr
    cdef int64_t[::1] ej = ej_arr
    cdef uint64_t state = seed
    cdef int64_t it, e1, e2, a, b, c, d, tmp
    cdef double w1, w2
    with nogil:
        for it in range(n_attempts):
            e1 = _randbelow(&state, m)
            e2 = _randbelow(&state, m)
            a = ei[e1]
            b = ej[e1]
            c = ei[e2]
            d = ej[e2]
            if _uniform(&state) < 0.5:
                tmp = c
                c = d
                d = tmp
            if e1 == e2 or a == c or a == d or b == c or b == d:
                continue
            if out[a, d] != 0.0 or out[c, b] != 0.0:
                continue
            w1 = out[a, b]
            w2 = out[c, d]
            out[a, b] = 0.0
            out[b, a] = 0.0
            out[c, d] = 0.0
            out[d, c] = 0.0
            out[a, d] = w1
            out[d, a] = w1
            out[c, b] = w2
            out[b, c] = w2
            ei[e1] = a
            ej[e1] = d
            ei[e2] = c
            ej[e2] = b
    return out_arr
