"""Compiled inner loops.

Everything here works on plain arrays over the *sampling cells* (cells whose
value is not already fixed by the global bounds), indexed 0..n-1.  The public
modules wrap these with dataclasses and validation.

LP state is a dense simplex tableau over all n variables:

    x[basis[i]] + sum_{j nonbasic} T[i, j] x[j] = beta[i]

with ``pos[j]`` the row of a basic variable (-1 when nonbasic).  Nonbasic
variables may sit strictly inside their box, which lets every LP start from a
known feasible table instead of running a phase one.
"""

import math

import numpy as np
from numba import njit

RREF_OK = 0
RREF_INCONSISTENT = 1
RREF_OVERFLOW = 2

# proposal status codes
OK = 0
FAIL_EMPTY = 1  # excluded value left an empty support
FAIL_CROSS = 2  # rounded bounds crossed
FAIL_BACKSUB = 3  # bound cells negative / non-integer / out of box
FAIL_LP = 4  # simplex did not terminate (should not happen)

KIND_RECIPROCAL = 0
KIND_UNIFORM = 1
KIND_HYPERGEOMETRIC = 2

TARGET_UNIFORM = 0
TARGET_HYPERGEOMETRIC = 1

SNAP = 1e-6
_PTOL = 1e-9
_DTOL = 1e-9
_DEGENERATE_RUN = 20
_INT_LIMIT = 1 << 30


# ---------------------------------------------------------------------------
# exact reduced row echelon form


@njit(cache=True)
def _gcd(a, b):
    a = abs(a)
    b = abs(b)
    while b:
        a, b = b, a % b
    return a


@njit(cache=True)
def rref_bareiss(A, b, order):
    """Fraction-free Gauss-Jordan elimination visiting columns in ``order``.

    Returns (num, rhs, den, pivots, rank, status).  Row i of the reduced
    system is ``num[i] / den[i] = rhs[i] / den[i]`` with a unit entry at
    column ``pivots[i]``; rows appear in pivot order.
    """
    m, n = A.shape
    W = A.copy()
    r = b.copy()
    prev = np.int64(1)
    rank = 0
    pivots = np.empty(min(m, n), np.int64)
    status = RREF_OK
    for k in range(n):
        c = order[k]
        if rank == m:
            break
        best = -1
        bestval = np.int64(0)
        for i in range(rank, m):
            v = abs(W[i, c])
            if v > bestval:
                bestval = v
                best = i
        if best < 0:
            continue
        if best != rank:
            for j in range(n):
                tmp = W[rank, j]
                W[rank, j] = W[best, j]
                W[best, j] = tmp
            tmp = r[rank]
            r[rank] = r[best]
            r[best] = tmp
        p = W[rank, c]
        for i in range(m):
            if i == rank:
                continue
            e = W[i, c]
            if e == 0 and p == prev:
                continue
            for j in range(n):
                val = p * W[i, j] - e * W[rank, j]
                if val % prev != 0:
                    status = RREF_OVERFLOW
                q = val // prev
                if q > _INT_LIMIT or q < -_INT_LIMIT:
                    status = RREF_OVERFLOW
                W[i, j] = q
            val = p * r[i] - e * r[rank]
            if val % prev != 0:
                status = RREF_OVERFLOW
            r[i] = val // prev
            if status != RREF_OK:
                return W[:0], r[:0], r[:0], pivots[:0], rank, status
        # rows skipped above are implicitly multiplied by p / prev == 1
        prev = p
        pivots[rank] = c
        rank += 1
    for i in range(rank, m):
        if r[i] != 0:
            status = RREF_INCONSISTENT
    num = W[:rank].copy()
    rhs = r[:rank].copy()
    den = np.empty(rank, np.int64)
    for i in range(rank):
        d = num[i, pivots[i]]
        g = abs(d)
        for j in range(n):
            if num[i, j] != 0:
                g = _gcd(g, num[i, j])
        g = _gcd(g, rhs[i])
        if d < 0:
            g = -g
        for j in range(n):
            num[i, j] //= g
        rhs[i] //= g
        den[i] = d // g
    return num, rhs, den, pivots[:rank].copy(), rank, status


@njit(cache=True)
def free_columns(n, pivots, order):
    """Non-pivot columns listed in visiting order."""
    is_piv = np.zeros(n, np.bool_)
    for c in pivots:
        is_piv[c] = True
    out = np.empty(n - pivots.size, np.int64)
    k = 0
    for c in order:
        if not is_piv[c]:
            out[k] = c
            k += 1
    return out


@njit(cache=True)
def float_tableau(num, rhs, den, pivots, n):
    m = num.shape[0]
    T = np.empty((m, n))
    beta = np.empty(m)
    for i in range(m):
        d = float(den[i])
        for j in range(n):
            T[i, j] = num[i, j] / d
        beta[i] = rhs[i] / d
    basis = pivots.copy()
    pos = np.full(n, -1, np.int64)
    for i in range(m):
        pos[basis[i]] = i
    return T, beta, basis, pos


@njit(cache=True)
def back_substitute(num, rhs, den, pivots, free, values, lo, hi, out):
    """Fill ``out`` from free-cell values.  Returns False on a non-integer or out-of-box bound cell."""
    for k in range(free.size):
        out[free[k]] = values[free[k]]
    m = num.shape[0]
    for i in range(m):
        acc = rhs[i]
        for k in range(free.size):
            j = free[k]
            if num[i, j] != 0:
                acc -= num[i, j] * values[j]
        if acc % den[i] != 0:
            return False
        v = acc // den[i]
        c = pivots[i]
        if v < lo[c] or v > hi[c]:
            return False
        out[c] = v
    return True


# ---------------------------------------------------------------------------
# bounded-variable primal simplex


@njit(cache=True)
def _pivot(T, beta, basis, pos, r, j):
    m, n = T.shape
    piv = T[r, j]
    nz = np.empty(n, np.int64)
    cnt = 0
    for k in range(n):
        if T[r, k] != 0.0:
            T[r, k] /= piv
            nz[cnt] = k
            cnt += 1
    beta[r] /= piv
    T[r, j] = 1.0
    for i in range(m):
        if i == r:
            continue
        f = T[i, j]
        if f != 0.0:
            for q in range(cnt):
                k = nz[q]
                T[i, k] -= f * T[r, k]
            beta[i] -= f * beta[r]
            T[i, j] = 0.0
    pos[basis[r]] = -1
    basis[r] = j
    pos[j] = r


@njit(cache=True)
def lp_optimize(T, beta, basis, pos, x, lo, hi, t, sense):
    """Minimise ``sense * x[t]`` from the feasible point ``x``.

    Largest-coefficient pricing, switching to Bland's rule after a run of
    degenerate pivots so the method cannot cycle.

    Returns (status, value) with status 0 on optimality.
    """
    m, n = T.shape
    max_iter = 50 * (m + n) + 100
    degenerate = 0
    for _ in range(max_iter):
        rt = pos[t]
        enter = -1
        direction = 0
        best = 0.0
        bland = degenerate > _DEGENERATE_RUN
        for j in range(n):
            if pos[j] >= 0 or hi[j] - lo[j] < _PTOL:
                continue
            if rt < 0:
                if j != t:
                    continue
                d = sense
            else:
                d = -sense * T[rt, j]
            if d < -_DTOL and x[j] < hi[j] - _PTOL:
                if -d > best:
                    best = -d
                    enter = j
                    direction = 1
            elif d > _DTOL and x[j] > lo[j] + _PTOL:
                if d > best:
                    best = d
                    enter = j
                    direction = -1
            if bland and enter >= 0:
                break
        if enter < 0:
            return 0, x[t]
        j = enter
        if direction > 0:
            theta = hi[j] - x[j]
        else:
            theta = x[j] - lo[j]
        leave = -1
        leave_at_lo = True
        for i in range(m):
            a = T[i, j] * direction
            bi = basis[i]
            if a > _PTOL:
                lim = (x[bi] - lo[bi]) / a
                at_lo = True
            elif a < -_PTOL:
                lim = (hi[bi] - x[bi]) / (-a)
                at_lo = False
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < theta - 1e-12 or (leave >= 0 and lim <= theta + 1e-12 and bi < basis[leave]):
                theta = lim
                leave = i
                leave_at_lo = at_lo
        step = theta * direction
        degenerate = degenerate + 1 if theta <= _PTOL else 0
        if step != 0.0:
            x[j] += step
            for i in range(m):
                a = T[i, j]
                if a != 0.0:
                    x[basis[i]] -= a * step
        if leave >= 0:
            bi = basis[leave]
            x[bi] = lo[bi] if leave_at_lo else hi[bi]
            _pivot(T, beta, basis, pos, leave, j)
        else:
            x[j] = hi[j] if direction > 0 else lo[j]
    return 1, x[t]


@njit(cache=True)
def cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax):
    """Real LP bounds of variable t from feasible ``x``.  Leaves ``x`` at the maximiser."""
    s1, lr = lp_optimize(T, beta, basis, pos, x, lo, hi, t, 1.0)
    basics_from_nonbasics(T, beta, basis, pos, x)
    lr = x[t]
    xmin[:] = x
    s2, ur = lp_optimize(T, beta, basis, pos, x, lo, hi, t, -1.0)
    basics_from_nonbasics(T, beta, basis, pos, x)
    ur = x[t]
    xmax[:] = x
    return s1 + s2, lr, ur


@njit(cache=True)
def round_bounds(lr, ur):
    return np.int64(math.ceil(lr - SNAP)), np.int64(math.floor(ur + SNAP))


@njit(cache=True)
def pin_between(T, beta, basis, pos, x, lo, hi, t, v, lr, ur, xmin, xmax):
    """Pin variable t to v, keeping x feasible.

    ``x`` must be the maximiser left by :func:`cell_bounds`.  Minimising
    x[t] over the slice x[t] >= v walks from that vertex down to x[t] = v,
    so x stays at a vertex and the next LP starts from there.
    """
    if v < ur - _PTOL:
        lo[t] = v
        lp_optimize(T, beta, basis, pos, x, lo, hi, t, 1.0)
    lo[t] = v
    hi[t] = v
    x[t] = v
    basics_from_nonbasics(T, beta, basis, pos, x)
    evict_pinned(T, beta, basis, pos, lo, hi, t)


@njit(cache=True)
def evict_pinned(T, beta, basis, pos, lo, hi, t):
    """Take the pinned variable t out of play without moving the point.

    A basic t is swapped for an unpinned nonbasic variable in its row; once
    nonbasic, its column is folded into ``beta`` and zeroed, so later pivots
    never touch it.
    """
    r = pos[t]
    if r >= 0:
        n = T.shape[1]
        best = -1
        mag = 1e-2
        for j in range(n):
            if pos[j] < 0 and hi[j] > lo[j]:
                a = abs(T[r, j])
                if a > mag:
                    mag = a
                    best = j
        if best < 0:
            return
        _pivot(T, beta, basis, pos, r, best)
    v = lo[t]
    for i in range(T.shape[0]):
        a = T[i, t]
        if a != 0.0:
            beta[i] -= a * v
            T[i, t] = 0.0


# ---------------------------------------------------------------------------
# cell-value distributions


@njit(cache=True)
def _log_weight(kind, L, U, v, logfact):
    if kind == KIND_RECIPROCAL:
        return -math.log(1.0 + v)
    if kind == KIND_UNIFORM:
        return 0.0
    # C(U, v) C(U, L+U-v); the C(2U, L+U) normaliser cancels
    w = L + U - v
    return (logfact[U] - logfact[v] - logfact[U - v]) + (logfact[U] - logfact[w] - logfact[U - w])


@njit(cache=True)
def log_pmf(kind, L, U, v, excl, logfact):
    """log f(v) on (L:U) minus ``excl`` (pass excl outside the range for none)."""
    if v < L or v > U or v == excl:
        return -np.inf
    mx = -np.inf
    for u in range(L, U + 1):
        if u != excl:
            w = _log_weight(kind, L, U, u, logfact)
            if w > mx:
                mx = w
    if mx == -np.inf:
        return -np.inf
    s = 0.0
    for u in range(L, U + 1):
        if u != excl:
            s += math.exp(_log_weight(kind, L, U, u, logfact) - mx)
    return _log_weight(kind, L, U, v, logfact) - mx - math.log(s)


@njit(cache=True)
def draw_value(rng, kind, L, U, excl, logfact):
    """Sample from f on (L:U) minus excl.  Returns (value, log pmf); value -1 if empty."""
    size = U - L + 1
    if excl >= L and excl <= U:
        size -= 1
    if size <= 0:
        return np.int64(-1), -np.inf
    w = np.empty(U - L + 1)
    mx = -np.inf
    for u in range(L, U + 1):
        if u == excl:
            w[u - L] = -np.inf
        else:
            w[u - L] = _log_weight(kind, L, U, u, logfact)
            if w[u - L] > mx:
                mx = w[u - L]
    s = 0.0
    for k in range(w.size):
        if w[k] == -np.inf:
            w[k] = 0.0
        else:
            w[k] = math.exp(w[k] - mx)
            s += w[k]
    target = rng.random() * s
    acc = 0.0
    last = -1
    for k in range(w.size):
        if w[k] > 0.0:
            last = k
            acc += w[k]
            if target < acc:
                return np.int64(L + k), math.log(w[k] / s)
    return np.int64(L + last), math.log(w[last] / s)


# ---------------------------------------------------------------------------
# table generation


@njit(cache=True)
def sample_free_suffix(rng, T, beta, basis, pos, x, lo, hi, free, start, excl, kind, logfact, out_vals):
    """Sample free cells free[start:] given earlier pins (already in lo/hi).

    ``x`` must be feasible on entry.  The value of free[start] avoids ``excl``.
    Sampled integers are written to ``out_vals`` (indexed by variable).
    Returns (status, log path probability, number of LP solves).
    """
    n = x.size
    xmin = np.empty(n)
    xmax = np.empty(n)
    logp = 0.0
    nlp = 0
    for k in range(start, free.size):
        t = free[k]
        st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
        nlp += 2
        if st != 0:
            return FAIL_LP, logp, nlp
        L, U = round_bounds(lr, ur)
        e = excl if k == start else -1
        if L > U:
            return FAIL_CROSS, logp, nlp
        if L == U and e != L:
            v = L
        else:
            v, lp = draw_value(rng, kind, L, U, e, logfact)
            if v < 0:
                return FAIL_EMPTY, logp, nlp
            logp += lp
        out_vals[t] = v
        pin_between(T, beta, basis, pos, x, lo, hi, t, float(v), lr, ur, xmin, xmax)
    return OK, logp, nlp


@njit(cache=True)
def score_free_suffix(T, beta, basis, pos, x, lo, hi, free, start, excl, kind, logfact, vals):
    """Log path probability of reproducing ``vals`` on free[start:] (``x`` = vals, feasible)."""
    n = x.size
    xmin = np.empty(n)
    xmax = np.empty(n)
    logp = 0.0
    nlp = 0
    for k in range(start, free.size):
        t = free[k]
        st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
        nlp += 2
        L, U = round_bounds(lr, ur)
        e = excl if k == start else -1
        v = vals[t]
        if not (L == U and e != L):
            logp += log_pmf(kind, L, U, v, e, logfact)
        lo[t] = v
        hi[t] = v
        for i in range(x.size):
            x[i] = vals[i]
        evict_pinned(T, beta, basis, pos, lo, hi, t)
    return logp, nlp


@njit(cache=True)
def sample_table_rref(rng, num, rhs, den, pivots, free, lo_i, hi_i, feasible, kind, logfact, out):
    """Free cells sampled sequentially, bound cells by back-substitution."""
    n = lo_i.size
    T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
    lo = lo_i.astype(np.float64)
    hi = hi_i.astype(np.float64)
    x = feasible.astype(np.float64)
    vals = np.zeros(n, np.int64)
    st, logp, nlp = sample_free_suffix(rng, T, beta, basis, pos, x, lo, hi, free, 0, -1, kind, logfact, vals)
    if st != OK:
        return st, logp, nlp
    if not back_substitute(num, rhs, den, pivots, free, vals, lo_i, hi_i, out):
        return FAIL_BACKSUB, logp, nlp
    return OK, logp, nlp


@njit(cache=True)
def sample_table_sequential(rng, num, rhs, den, pivots, order, lo_i, hi_i, feasible, A, b, kind, logfact, out):
    """Every cell visited in ``order``; bounds by LP on the reduced system."""
    n = lo_i.size
    T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
    lo = lo_i.astype(np.float64)
    hi = hi_i.astype(np.float64)
    x = feasible.astype(np.float64)
    xmin = np.empty(n)
    xmax = np.empty(n)
    logp = 0.0
    nlp = 0
    for k in range(n):
        t = order[k]
        st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
        nlp += 2
        if st != 0:
            return FAIL_LP, logp, nlp
        L, U = round_bounds(lr, ur)
        if L > U:
            return FAIL_CROSS, logp, nlp
        if L == U:
            v = L
        else:
            v, lp = draw_value(rng, kind, L, U, -1, logfact)
            logp += lp
        out[t] = v
        pin_between(T, beta, basis, pos, x, lo, hi, t, float(v), lr, ur, xmin, xmax)
    # exact check of the equality constraints
    m = A.shape[0]
    for i in range(m):
        acc = 0
        for j in range(n):
            acc += A[i, j] * out[j]
        if acc != b[i]:
            return FAIL_BACKSUB, logp, nlp
    return OK, logp, nlp


# ---------------------------------------------------------------------------
# dynamic Markov basis proposal


@njit(cache=True)
def propose_neighbor(rng, num, rhs, den, pivots, free, lo_i, hi_i, cur, M, kind, logfact, out):
    """Order-M neighbour of ``cur``.  Returns (status, log q forward, log q reverse, LP solves)."""
    n = lo_i.size
    T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
    lo = lo_i.astype(np.float64)
    hi = hi_i.astype(np.float64)
    x = cur.astype(np.float64)
    for k in range(M):
        f = free[k]
        lo[f] = cur[f]
        hi[f] = cur[f]
        evict_pinned(T, beta, basis, pos, lo, hi, f)
    t = free[M]
    xmin = np.empty(n)
    xmax = np.empty(n)
    st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
    nlp = 2
    if st != 0:
        return FAIL_LP, 0.0, 0.0, nlp
    L, U = round_bounds(lr, ur)
    c = cur[t]
    v, logf = draw_value(rng, kind, L, U, c, logfact)
    if v < 0:
        return FAIL_EMPTY, 0.0, 0.0, nlp
    logr = log_pmf(kind, L, U, c, v, logfact)
    # snapshot for the reverse path, which shares the first M pins
    T2 = T.copy()
    beta2 = beta.copy()
    basis2 = basis.copy()
    pos2 = pos.copy()
    lo2 = lo.copy()
    hi2 = hi.copy()

    vals = np.zeros(n, np.int64)
    vals[t] = v
    pin_between(T, beta, basis, pos, x, lo, hi, t, float(v), lr, ur, xmin, xmax)
    st, lp_rest, k_lp = sample_free_suffix(rng, T, beta, basis, pos, x, lo, hi, free, M + 1, -1, kind, logfact, vals)
    nlp += k_lp
    if st != OK:
        return st, logf, 0.0, nlp
    logf += lp_rest
    for k in range(M):
        vals[free[k]] = cur[free[k]]
    if not back_substitute(num, rhs, den, pivots, free, vals, lo_i, hi_i, out):
        return FAIL_BACKSUB, logf, 0.0, nlp

    lo2[t] = c
    hi2[t] = c
    evict_pinned(T2, beta2, basis2, pos2, lo2, hi2, t)
    x2 = cur.astype(np.float64)
    lr_rest, k_lp = score_free_suffix(T2, beta2, basis2, pos2, x2, lo2, hi2, free, M + 1, -1, kind, logfact, cur)
    nlp += k_lp
    return OK, logf, logr + lr_rest, nlp


@njit(cache=True)
def log_kernel(target, table, logfact):
    if target == TARGET_UNIFORM:
        return 0.0
    s = 0.0
    for v in table:
        s -= logfact[v]
    return s


@njit(cache=True)
def statistics(table, fixed_part, mu):
    """(X^2, G^2) of the table over sampling cells; ``fixed_part`` holds the fixed cells' contribution."""
    x2 = fixed_part[0]
    g2 = fixed_part[1]
    for i in range(table.size):
        v = table[i]
        m = mu[i]
        if m > 0.0:
            d = v - m
            x2 += d * d / m
            if v > 0:
                g2 += 2.0 * v * math.log(v / m)
    return x2, g2


@njit(cache=True)
def draw_index(rng, cdf):
    u = rng.random()
    lo = 0
    hi = cdf.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def mh_step(rng, A, b, lo_i, hi_i, cur, target, g_cdf, kind, logfact, out, counters):
    """One Metropolis-Hastings update of ``cur`` in place.

    counters: [accepted, rejected, failed, lp_solves, rref_errors].  Returns True on acceptance.
    """
    n = lo_i.size
    order = rng.permutation(n)
    num, rhs, den, pivots, rank, status = rref_bareiss(A, b, order)
    if status != RREF_OK:
        counters[4] += 1
        counters[2] += 1
        return False
    free = free_columns(n, pivots, order)
    M = draw_index(rng, g_cdf)
    st, logf, logr, nlp = propose_neighbor(rng, num, rhs, den, pivots, free, lo_i, hi_i, cur, M, kind, logfact, out)
    counters[3] += nlp
    if st != OK:
        counters[2] += 1
        return False
    log_alpha = log_kernel(target, out, logfact) - log_kernel(target, cur, logfact) + logr - logf
    if log_alpha >= 0.0 or math.log(rng.random()) < log_alpha:
        cur[:] = out
        counters[0] += 1
        return True
    counters[1] += 1
    return False


@njit(cache=True)
def run_chain(rng, A, b, lo_i, hi_i, cur, target, g_cdf, kind, logfact, iterations, burn_in,
              mu, fixed_part, thresholds, ind_out, visit_codes, code_weights, counters, check_every):
    """Run the chain, writing X^2/G^2 exceedance indicators after burn-in.

    ``ind_out`` has shape (iterations - burn_in, 2).  When ``code_weights`` is
    non-empty the dot product of the table with it is stored per recorded step
    in ``visit_codes`` (used to identify tables on small fibers).
    Returns 0, or the step index + 1 of a failed invariant check.
    """
    n = lo_i.size
    out = np.empty(n, np.int64)
    x2, g2 = statistics(cur, fixed_part, mu)
    for it in range(iterations):
        accepted = mh_step(rng, A, b, lo_i, hi_i, cur, target, g_cdf, kind, logfact, out, counters)
        if accepted:
            x2, g2 = statistics(cur, fixed_part, mu)
            if check_every > 0 and counters[0] % check_every == 0:
                for i in range(A.shape[0]):
                    acc = 0
                    for j in range(n):
                        acc += A[i, j] * cur[j]
                    if acc != b[i]:
                        return it + 1
                for j in range(n):
                    if cur[j] < lo_i[j] or cur[j] > hi_i[j]:
                        return it + 1
        if it >= burn_in:
            r = it - burn_in
            ind_out[r, 0] = 1 if x2 >= thresholds[0] else 0
            ind_out[r, 1] = 1 if g2 >= thresholds[1] else 0
            if code_weights.size > 0:
                code = 0
                for j in range(n):
                    code += code_weights[j] * cur[j]
                visit_codes[r] = code
    return 0


# ---------------------------------------------------------------------------
# neighbour-order distribution (exploration)


@njit(cache=True)
def binary_search_sb(T, beta, basis, pos, lo_i, hi_i, free, nstar):
    """Largest s with some suffix free cell still having distinct rounded bounds.

    Returns (s_b, LP solves).
    """
    n = lo_i.size
    F = free.size
    xmin = np.empty(n)
    xmax = np.empty(n)
    lo = np.empty(n)
    hi = np.empty(n)
    x = np.empty(n)
    s1 = 0
    s2 = F
    nlp = 0
    while s1 + 1 != s2:
        s = (s1 + s2) // 2
        for i in range(n):
            lo[i] = lo_i[i]
            hi[i] = hi_i[i]
            x[i] = nstar[i]
        for k in range(s):
            f = free[k]
            lo[f] = nstar[f]
            hi[f] = nstar[f]
        all_equal = True
        for k in range(s, F):
            t = free[k]
            for i in range(n):
                x[i] = nstar[i]
            st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
            nlp += 2
            L, U = round_bounds(lr, ur)
            if L != U:
                all_equal = False
                break
        if all_equal:
            s2 = s
        else:
            s1 = s
    return s1, nlp


@njit(cache=True)
def refine_s_reference(rng, num, rhs, den, pivots, free, lo_i, hi_i, nstar, sb, kind, logfact, retries):
    """Plain form of :func:`refine_s`: every try solves its own LPs from scratch."""
    n = lo_i.size
    out = np.empty(n, np.int64)
    vals = np.zeros(n, np.int64)
    nlp = 0
    for s in range(sb, -1, -1):
        for _ in range(retries):
            T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
            lo = lo_i.astype(np.float64)
            hi = hi_i.astype(np.float64)
            for k in range(s):
                f = free[k]
                lo[f] = nstar[f]
                hi[f] = nstar[f]
                vals[f] = nstar[f]
            x = nstar.astype(np.float64)
            st, logp, k_lp = sample_free_suffix(rng, T, beta, basis, pos, x, lo, hi, free, s, -1, kind, logfact, vals)
            nlp += k_lp
            if st != OK:
                continue
            if not back_substitute(num, rhs, den, pivots, free, vals, lo_i, hi_i, out):
                continue
            for i in range(n):
                if out[i] != nstar[i]:
                    return s, nlp
    return 0, nlp


@njit(cache=True)
def _pinned_tableau(num, rhs, den, pivots, free, lo_i, hi_i, nstar, k, n):
    """Fresh tableau with free[0:k] pinned to n* and folded out."""
    T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
    lo = lo_i.astype(np.float64)
    hi = hi_i.astype(np.float64)
    for q in range(k):
        f = free[q]
        lo[f] = nstar[f]
        hi[f] = nstar[f]
        evict_pinned(T, beta, basis, pos, lo, hi, f)
    return T, beta, basis, pos, lo, hi


@njit(cache=True)
def refine_s(rng, num, rhs, den, pivots, free, lo_i, hi_i, nstar, sb, kind, logfact, retries):
    """Descend from s_b until a completion differs from n*.  Returns (s, LP solves).

    The bounds of free cell k with free[0:k] pinned to n* do not depend on
    the try or on s, so they are computed once and reused; fresh LPs are
    only needed after a try first departs from n*.  The draws are the same
    as in :func:`refine_s_reference`.
    """
    n = lo_i.size
    F = free.size
    out = np.empty(n, np.int64)
    vals = np.zeros(n, np.int64)
    known = np.zeros(F, np.bool_)
    Ls = np.zeros(F, np.int64)
    Us = np.zeros(F, np.int64)
    lrs = np.zeros(F)
    urs = np.zeros(F)
    xmins = np.zeros((F, n))
    xmaxs = np.zeros((F, n))
    xmin = np.empty(n)
    xmax = np.empty(n)
    nlp = 0
    for s in range(sb, -1, -1):
        for _ in range(retries):
            dev = -1
            v = np.int64(0)
            for k in range(s, F):
                if not known[k]:
                    T, beta, basis, pos, lo, hi = _pinned_tableau(num, rhs, den, pivots, free, lo_i, hi_i, nstar, k, n)
                    x = nstar.astype(np.float64)
                    st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, free[k], xmin, xmax)
                    nlp += 2
                    L, U = round_bounds(lr, ur)
                    Ls[k] = L
                    Us[k] = U
                    lrs[k] = lr
                    urs[k] = ur
                    xmins[k, :] = xmin
                    xmaxs[k, :] = xmax
                    known[k] = True
                if Ls[k] == Us[k]:
                    continue
                v, lp = draw_value(rng, kind, Ls[k], Us[k], -1, logfact)
                if v != nstar[free[k]]:
                    dev = k
                    break
            if dev < 0:
                continue  # the completion is n* itself
            t = free[dev]
            T, beta, basis, pos, lo, hi = _pinned_tableau(num, rhs, den, pivots, free, lo_i, hi_i, nstar, dev, n)
            width = urs[dev] - lrs[dev]
            lam = (v - lrs[dev]) / width
            x = xmins[dev] + lam * (xmaxs[dev] - xmins[dev])
            x[t] = v
            lo[t] = v
            hi[t] = v
            evict_pinned(T, beta, basis, pos, lo, hi, t)
            basics_from_nonbasics(T, beta, basis, pos, x)
            for q in range(dev):
                vals[free[q]] = nstar[free[q]]
            vals[t] = v
            st, logp, k_lp = sample_free_suffix(rng, T, beta, basis, pos, x, lo, hi, free, dev + 1, -1, kind, logfact, vals)
            nlp += k_lp
            if st != OK:
                continue
            if back_substitute(num, rhs, den, pivots, free, vals, lo_i, hi_i, out):
                return s, nlp
    return 0, nlp


@njit(cache=True)
def estimate_g(rng, A, b, lo_i, hi_i, feasible, kind, logfact, i_max, retries, max_attempts, counts, stats):
    """Repeated exploration; ``counts[s]`` (length F) is incremented per returned s.

    stats: [iterations done, table attempts, LP solves, s_b sum, s sum].
    Returns 0 on success, 1 if a table could not be sampled within ``max_attempts``.
    """
    n = lo_i.size
    nstar = np.empty(n, np.int64)
    for it in range(i_max):
        ok = False
        for _ in range(max_attempts):
            order = rng.permutation(n)
            num, rhs, den, pivots, rank, status = rref_bareiss(A, b, order)
            stats[1] += 1
            if status != RREF_OK:
                continue
            free = free_columns(n, pivots, order)
            st, logp, nlp = sample_table_rref(rng, num, rhs, den, pivots, free, lo_i, hi_i, feasible, kind, logfact, nstar)
            stats[2] += nlp
            if st == OK:
                ok = True
                break
        if not ok:
            return 1
        status = RREF_OVERFLOW
        while status != RREF_OK:
            order = rng.permutation(n)
            num, rhs, den, pivots, rank, status = rref_bareiss(A, b, order)
        free = free_columns(n, pivots, order)
        T, beta, basis, pos = float_tableau(num, rhs, den, pivots, n)
        sb, nlp = binary_search_sb(T, beta, basis, pos, lo_i, hi_i, free, nstar)
        stats[2] += nlp
        s, nlp = refine_s(rng, num, rhs, den, pivots, free, lo_i, hi_i, nstar, sb, kind, logfact, retries)
        stats[2] += nlp
        counts[s] += 1
        stats[0] += 1
        stats[3] += sb
        stats[4] += s
    return 0


@njit(cache=True)
def lp_phase1(T, beta, basis, pos, x, lo, hi):
    """Drive basic variables into their boxes by minimising total infeasibility.

    Nonbasic variables must already lie in their boxes.  Returns 0 when a
    feasible point is reached, 1 if the constraints are infeasible, 2 on the
    iteration cap.
    """
    m, n = T.shape
    cost = np.zeros(m)
    for _ in range(50 * (m + n) + 100):
        any_bad = False
        for i in range(m):
            bi = basis[i]
            if x[bi] < lo[bi] - _PTOL:
                cost[i] = -1.0
                any_bad = True
            elif x[bi] > hi[bi] + _PTOL:
                cost[i] = 1.0
                any_bad = True
            else:
                cost[i] = 0.0
        if not any_bad:
            return 0
        enter = -1
        direction = 0
        for j in range(n):
            if pos[j] >= 0:
                continue
            d = 0.0
            for i in range(m):
                if cost[i] != 0.0:
                    d -= cost[i] * T[i, j]
            if d < -_DTOL and x[j] < hi[j] - _PTOL:
                enter = j
                direction = 1
                break
            if d > _DTOL and x[j] > lo[j] + _PTOL:
                enter = j
                direction = -1
                break
        if enter < 0:
            return 1
        j = enter
        theta = hi[j] - x[j] if direction > 0 else x[j] - lo[j]
        leave = -1
        leave_at_lo = True
        for i in range(m):
            a = T[i, j] * direction  # x_B changes at rate -a
            bi = basis[i]
            lim = np.inf
            at_lo = True
            if cost[i] == 0.0:
                if a > _PTOL:
                    lim = (x[bi] - lo[bi]) / a
                elif a < -_PTOL:
                    lim = (hi[bi] - x[bi]) / (-a)
                    at_lo = False
            elif cost[i] < 0.0:
                if a < -_PTOL:
                    lim = (lo[bi] - x[bi]) / (-a)
            else:
                if a > _PTOL:
                    lim = (x[bi] - hi[bi]) / a
                    at_lo = False
            if lim == np.inf:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < theta - 1e-12 or (leave >= 0 and lim <= theta + 1e-12 and bi < basis[leave]):
                theta = lim
                leave = i
                leave_at_lo = at_lo
        step = theta * direction
        if step != 0.0:
            x[j] += step
            for i in range(m):
                a = T[i, j]
                if a != 0.0:
                    x[basis[i]] -= a * step
        if leave >= 0:
            bi = basis[leave]
            x[bi] = lo[bi] if leave_at_lo else hi[bi]
            _pivot(T, beta, basis, pos, leave, j)
    return 2


@njit(cache=True)
def basics_from_nonbasics(T, beta, basis, pos, x):
    m, n = T.shape
    for i in range(m):
        acc = beta[i]
        for k in range(n):
            if pos[k] < 0 and T[i, k] != 0.0:
                acc -= T[i, k] * x[k]
        x[basis[i]] = acc


@njit(cache=True)
def all_cell_bounds(T, beta, basis, pos, x, lo, hi, out_lo, out_hi):
    """Rounded LP bounds of every variable from feasible ``x``."""
    n = x.size
    xmin = np.empty(n)
    xmax = np.empty(n)
    for t in range(n):
        st, lr, ur = cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
        if st != 0:
            return 1
        L, U = round_bounds(lr, ur)
        out_lo[t] = L
        out_hi[t] = U
    return 0
