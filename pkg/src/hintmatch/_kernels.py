"""Numba-compiled numeric kernels.

Private to the package: public modules wrap these with validation and
friendlier types. All assignment kernels work on 0-based indices and treat
rows as agents, columns as arms (rows <= cols).
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Cost used to keep an edge out of a solution; dominates any real weight the
# package ever feeds in (weights are O(M) at most).
_FORBIDDEN_COST = 1e15


@njit(cache=True)
def solve_lsap_min(cost):
    """Min-cost rectangular assignment via shortest augmenting paths.

    ``cost`` must have n_rows <= n_cols and finite entries. Returns the
    column assigned to each row. Classic Jonker-Volgenant / Crouse scheme.
    """
    nr, nc = cost.shape
    u = np.zeros(nr)
    v = np.zeros(nc)
    col4row = np.full(nr, -1, np.int64)
    row4col = np.full(nc, -1, np.int64)
    shortest = np.empty(nc)
    path = np.empty(nc, np.int64)
    remaining = np.empty(nc, np.int64)
    touched_rows = np.empty(nr, np.bool_)
    touched_cols = np.empty(nc, np.bool_)

    for cur_row in range(nr):
        for j in range(nc):
            shortest[j] = np.inf
            path[j] = -1
            remaining[j] = j
            touched_cols[j] = False
        for i in range(nr):
            touched_rows[i] = False
        num_remaining = nc
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            touched_rows[i] = True
            index = -1
            lowest = np.inf
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            touched_cols[j] = True
            remaining[index] = remaining[num_remaining - 1]
            num_remaining -= 1

        u[cur_row] += min_val
        for ir in range(nr):
            if touched_rows[ir] and ir != cur_row:
                u[ir] += min_val - shortest[col4row[ir]]
        for jc in range(nc):
            if touched_cols[jc]:
                v[jc] -= min_val - shortest[jc]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur_row:
                break
    return col4row


@njit(cache=True)
def _masked_max_value(weights, banned):
    """Max total weight over assignments avoiding banned edges.

    Returns (value, feasible). Infeasible only when banned edges leave some
    row without any completable column.
    """
    nr, nc = weights.shape
    cost = np.empty((nr, nc))
    for i in range(nr):
        for j in range(nc):
            cost[i, j] = _FORBIDDEN_COST if banned[i, j] else -weights[i, j]
    cols = solve_lsap_min(cost)
    value = 0.0
    for i in range(nr):
        if banned[i, cols[i]]:
            return -np.inf, False
        value += weights[i, cols[i]]
    return value, True


@njit(cache=True)
def _completion_value(weights, banned, cols_used, first_row):
    """Best value for rows first_row.. over columns not yet used."""
    nr, nc = weights.shape
    rem_rows = nr - first_row
    if rem_rows == 0:
        return 0.0, True
    rem_cols = 0
    for c in range(nc):
        if not cols_used[c]:
            rem_cols += 1
    if rem_cols < rem_rows:
        return -np.inf, False
    sub = np.empty((rem_rows, rem_cols))
    col_of = np.empty(rem_cols, np.int64)
    jj = 0
    for c in range(nc):
        if not cols_used[c]:
            col_of[jj] = c
            jj += 1
    for i in range(rem_rows):
        for j in range(rem_cols):
            c = col_of[j]
            sub[i, j] = _FORBIDDEN_COST if banned[first_row + i, c] else -weights[first_row + i, c]
    cols = solve_lsap_min(sub)
    value = 0.0
    for i in range(rem_rows):
        c = col_of[cols[i]]
        if banned[first_row + i, c]:
            return -np.inf, False
        value += weights[first_row + i, c]
    return value, True


@njit(cache=True)
def lex_best_cols(weights, banned):
    """Lexicographically-smallest assignment among (near-)maximum ones.

    Ties within an absolute 1e-9 band collapse toward smaller (row, col)
    pairs, so independent computations from equal inputs agree exactly.
    Returns (cols, feasible).
    """
    nr, nc = weights.shape
    out = np.full(nr, -1, np.int64)
    vstar, feasible = _masked_max_value(weights, banned)
    if not feasible:
        return out, False
    tol = 1e-9 * (1.0 + abs(vstar))
    cols_used = np.zeros(nc, np.bool_)
    fixed = 0.0
    for i in range(nr):
        chosen = -1
        for c in range(nc):
            if cols_used[c] or banned[i, c]:
                continue
            cols_used[c] = True
            tail, ok = _completion_value(weights, banned, cols_used, i + 1)
            cols_used[c] = False
            if ok and fixed + weights[i, c] + tail >= vstar - tol:
                chosen = c
                break
        if chosen < 0:
            # unreachable for feasible inputs; surfaced to the caller anyway
            return out, False
        out[i] = chosen
        cols_used[chosen] = True
        fixed += weights[i, chosen]
    return out, True


@njit(cache=True)
def _lex_less(a, b):
    for i in range(a.shape[0]):
        if a[i] != b[i]:
            return a[i] < b[i]
    return False


@njit(cache=True)
def best_cols_excluding_assignment(weights, incumbent_cols):
    """Best assignment distinct from the incumbent, lexicographic on ties.

    Every assignment other than the incumbent omits at least one of its
    edges, so the candidates obtained by banning each incumbent edge in turn
    cover the full alternative space. Returns (cols, value, feasible).
    """
    nr, nc = weights.shape
    banned = np.zeros((nr, nc), np.bool_)
    best = np.full(nr, -1, np.int64)
    best_val = -np.inf
    found = False
    for m in range(nr):
        banned[m, incumbent_cols[m]] = True
        cols, ok = lex_best_cols(weights, banned)
        banned[m, incumbent_cols[m]] = False
        if not ok:
            continue
        val = 0.0
        for i in range(nr):
            val += weights[i, cols[i]]
        tol = 1e-9 * (1.0 + abs(max(val, best_val)))
        if not found or val > best_val + tol:
            best = cols
            best_val = val
            found = True
        elif val >= best_val - tol and _lex_less(cols, best):
            best = cols
            if val > best_val:
                best_val = val
    return best, best_val, found


@njit(cache=True)
def kl_bernoulli_nb(p, q):
    if p == q:
        return 0.0
    if q <= 0.0 or q >= 1.0:
        return np.inf
    if p <= 0.0:
        return -np.log1p(-q)
    if p >= 1.0:
        return -np.log(q)
    return p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))


@njit(cache=True)
def klucb_bisect(mu, pulls, rate):
    """Largest q in [mu, 1] with pulls * kl(mu, q) <= rate, by bisection.

    64 fixed halvings push the bracket width far below the 1e-9 contract.
    Unsampled entries (pulls == 0) sit at the top of the Bernoulli range.
    """
    if pulls <= 0:
        return 1.0
    if mu >= 1.0:
        return 1.0
    if rate <= 0.0:
        return mu
    lo = mu
    hi = 1.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if pulls * kl_bernoulli_nb(mu, mid) <= rate:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def klucb_matrix(mu, pulls, rate, out):
    nr, nc = mu.shape
    for i in range(nr):
        for j in range(nc):
            out[i, j] = klucb_bisect(mu[i, j], pulls[i, j], rate)
    return out


@njit(cache=True)
def collision_mask_nb(arms):
    n = arms.shape[0]
    out = np.zeros(n, np.bool_)
    for i in range(n):
        for j in range(n):
            if j != i and arms[j] == arms[i]:
                out[i] = True
                break
    return out


@njit(cache=True)
def edge_step_core(counts, sums, rate):
    """Fused per-round work for the edge-level policies.

    Returns (pull_cols, pull_value, alt_cols, alt_value, alt_found) where the
    alternative is the best matching under the kl-UCB indices that differs
    from the pull matching.
    """
    nr, nc = counts.shape
    mu = np.zeros((nr, nc))
    d = np.empty((nr, nc))
    for i in range(nr):
        for j in range(nc):
            if counts[i, j] > 0:
                mu[i, j] = sums[i, j] / counts[i, j]
            d[i, j] = klucb_bisect(mu[i, j], counts[i, j], rate)
    banned = np.zeros((nr, nc), np.bool_)
    pull_cols, _ = lex_best_cols(mu, banned)
    pull_value = 0.0
    for i in range(nr):
        pull_value += mu[i, pull_cols[i]]
    opt_cols, _ = lex_best_cols(d, banned)
    same = True
    for i in range(nr):
        if opt_cols[i] != pull_cols[i]:
            same = False
            break
    if same:
        alt_cols, alt_value, found = best_cols_excluding_assignment(d, pull_cols)
    else:
        alt_cols = opt_cols
        alt_value = 0.0
        for i in range(nr):
            alt_value += d[i, alt_cols[i]]
        found = True
    return pull_cols, pull_value, alt_cols, alt_value, found


@njit(cache=True)
def apply_edge_observations_nb(counts, sums, pull0, rewards, shared,
                               has_hint, hint0, hint_rewards):
    for m in range(pull0.shape[0]):
        if not shared[m]:
            counts[m, pull0[m]] += 1
            sums[m, pull0[m]] += rewards[m]
        if has_hint:
            counts[m, hint0[m]] += 1
            sums[m, hint0[m]] += hint_rewards[m]


@njit(cache=True)
def profile_utilities(means, profiles):
    """Collision-aware utilities for 0-based profiles, one row per profile."""
    n, num_agents = profiles.shape
    out = np.empty(n)
    for r in range(n):
        total = 0.0
        for i in range(num_agents):
            a = profiles[r, i]
            shared = False
            for j in range(num_agents):
                if j != i and profiles[r, j] == a:
                    shared = True
                    break
            if not shared:
                total += means[i, a]
        out[r] = total
    return out
