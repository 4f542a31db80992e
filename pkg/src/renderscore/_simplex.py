"""Dense transportation network simplex, JIT-compiled.

Solves  min Σ f_ij C_ij  s.t.  Σ_j f_ij = a_i,  Σ_i f_ij = b_j,  f >= 0
for equal-total supplies/demands on the complete bipartite graph.

Performance notes, since this sits under every earth-mover call:
- the initial basis comes from a cost-sorted greedy allocation (a forest by
  construction) completed to a spanning tree with zero-flow arcs, which
  needs far fewer pivots than the northwest-corner start;
- pricing keeps one candidate cell per supply row and only rescans the full
  matrix when the candidate list goes stale, so the O(mn) sweep is amortized
  over many pivots;
- duals and depths are rebuilt from the parent array after every pivot
  (O(m+n), cheap next to pricing).

Dantzig-style selection can cycle on degenerate instances, so after an
iteration cap the pricing falls back to Bland's rule (first negative cell in
index order), which terminates. Status codes: 0 = optimal, 1 = pivot limit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OPTIMAL = 0
STATUS_ITERATION_LIMIT = 1


@njit(cache=True)
def _uf_find(uf, x):
    root = x
    while uf[root] != root:
        root = uf[root]
    while uf[x] != root:
        nxt = uf[x]
        uf[x] = root
        x = nxt
    return root


@njit(cache=True)
def _rebuild_tree(parent, order, depth, dual, cost, m, n,
                  child_off, child_buf, stack):
    """Recompute BFS order, depths and duals from the parent array."""
    nn = m + n
    for i in range(nn + 1):
        child_off[i] = 0
    for v in range(nn):
        p = parent[v]
        if p >= 0:
            child_off[p + 1] += 1
    for i in range(nn):
        child_off[i + 1] += child_off[i]
    for v in range(nn):
        p = parent[v]
        if p >= 0:
            child_buf[child_off[p]] = v
            child_off[p] += 1
    for i in range(nn, 0, -1):
        child_off[i] = child_off[i - 1]
    child_off[0] = 0

    root = 0
    depth[root] = 0
    dual[root] = 0.0
    sp = 0
    stack[sp] = root
    sp += 1
    k = 0
    while sp > 0:
        sp -= 1
        v = stack[sp]
        order[k] = v
        k += 1
        for idx in range(child_off[v], child_off[v + 1]):
            c = child_buf[idx]
            depth[c] = depth[v] + 1
            if c < m:
                dual[c] = cost[c, v - m] - dual[v]
            else:
                dual[c] = cost[v, c - m] - dual[v]
            stack[sp] = c
            sp += 1
    return k


@njit(cache=True)
def _initial_basis(cost, a, b, parent, pflow, m, n,
                   child_off, child_buf, stack):
    """Greedy cost-sorted allocation completed to a spanning tree.

    Fills parent/pflow in place. Greedy allocation in ascending cost order
    exhausts at least one endpoint per placed cell, so its support is a
    forest; leftover connectivity is added as zero-flow arcs, cheapest
    first.
    """
    nn = m + n
    order = np.argsort(cost.ravel())
    ra = a.copy()
    rb = b.copy()
    arc_u = np.empty(nn - 1, dtype=np.int64)
    arc_v = np.empty(nn - 1, dtype=np.int64)
    arc_f = np.empty(nn - 1, dtype=np.float64)
    n_arcs = 0
    uf = np.arange(nn, dtype=np.int64)
    components = nn

    for idx in range(order.shape[0]):
        cell = order[idx]
        r = cell // n
        c = cell % n
        if ra[r] > 0.0 and rb[c] > 0.0:
            f = min(ra[r], rb[c])
            ra[r] -= f
            rb[c] -= f
            arc_u[n_arcs] = r
            arc_v[n_arcs] = m + c
            arc_f[n_arcs] = f
            n_arcs += 1
            ru = _uf_find(uf, r)
            rv = _uf_find(uf, m + c)
            uf[ru] = rv
            components -= 1

    if components > 1:
        for idx in range(order.shape[0]):
            cell = order[idx]
            r = cell // n
            c = cell % n
            ru = _uf_find(uf, r)
            rv = _uf_find(uf, m + c)
            if ru != rv:
                arc_u[n_arcs] = r
                arc_v[n_arcs] = m + c
                arc_f[n_arcs] = 0.0
                n_arcs += 1
                uf[ru] = rv
                components -= 1
                if components == 1:
                    break

    # orient the tree: adjacency over the arc list, BFS from node 0
    deg_off = child_off  # reuse scratch
    for i in range(nn + 1):
        deg_off[i] = 0
    for t in range(n_arcs):
        deg_off[arc_u[t] + 1] += 1
        deg_off[arc_v[t] + 1] += 1
    for i in range(nn):
        deg_off[i + 1] += deg_off[i]
    adj_arc = np.empty(2 * n_arcs, dtype=np.int64)
    fill = deg_off.copy()
    for t in range(n_arcs):
        adj_arc[fill[arc_u[t]]] = t
        fill[arc_u[t]] += 1
        adj_arc[fill[arc_v[t]]] = t
        fill[arc_v[t]] += 1

    for v in range(nn):
        parent[v] = -1
    visited = child_buf  # reuse scratch as flags
    for v in range(nn):
        visited[v] = 0
    sp = 0
    stack[sp] = 0
    sp += 1
    visited[0] = 1
    while sp > 0:
        sp -= 1
        v = stack[sp]
        for k in range(deg_off[v], deg_off[v + 1]):
            t = adj_arc[k]
            w = arc_u[t] if arc_v[t] == v else arc_v[t]
            if visited[w] == 0:
                visited[w] = 1
                parent[w] = v
                pflow[w] = arc_f[t]
                stack[sp] = w
                sp += 1


@njit(cache=True)
def _refresh_candidates(cost, dual, m, n, tol, cand_j, cand_rc):
    """Best (most negative reduced cost) column per row; -1 when none."""
    negatives = 0
    for r in range(m):
        du = dual[r]
        best = -tol
        bj = -1
        for c in range(n):
            rc = cost[r, c] - du - dual[m + c]
            if rc < best:
                best = rc
                bj = c
        cand_j[r] = bj
        cand_rc[r] = best
        if bj >= 0:
            negatives += 1
    return negatives


@njit(cache=True)
def solve_transport_dense(cost, a, b, max_pivots):
    """Network simplex for the balanced dense transportation problem.

    Returns (flow_rows, flow_cols, flow_vals, objective, status). ``a`` and
    ``b`` must be nonnegative with equal totals; zero entries are allowed.
    """
    m = a.shape[0]
    n = b.shape[0]
    nn = m + n

    parent = np.full(nn, -1, dtype=np.int64)
    pflow = np.zeros(nn, dtype=np.float64)
    depth = np.zeros(nn, dtype=np.int64)
    dual = np.zeros(nn, dtype=np.float64)
    order = np.zeros(nn, dtype=np.int64)
    child_off = np.zeros(nn + 1, dtype=np.int64)
    child_buf = np.zeros(nn, dtype=np.int64)
    stack = np.zeros(nn, dtype=np.int64)

    _initial_basis(cost, a, b, parent, pflow, m, n,
                   child_off, child_buf, stack)
    _rebuild_tree(parent, order, depth, dual, cost, m, n,
                  child_off, child_buf, stack)

    cmax = 0.0
    for r in range(m):
        for c in range(n):
            v = abs(cost[r, c])
            if v > cmax:
                cmax = v
    tol = 1e-11 * (cmax if cmax > 1.0 else 1.0)

    path_a = np.zeros(nn, dtype=np.int64)
    path_b = np.zeros(nn, dtype=np.int64)
    cand_j = np.full(m, -1, dtype=np.int64)
    cand_rc = np.zeros(m, dtype=np.float64)
    have_candidates = False

    bland_after = 50 * nn + 2000
    status = STATUS_ITERATION_LIMIT
    pivot = 0
    while pivot < max_pivots:
        pivot += 1
        ei = -1
        ej = -1
        if pivot <= bland_after:
            # candidate-list pricing: re-price stored per-row candidates,
            # rescan the matrix only when they all go stale
            if not have_candidates:
                if _refresh_candidates(cost, dual, m, n, tol, cand_j, cand_rc) == 0:
                    status = STATUS_OPTIMAL
                    break
                have_candidates = True
            best = -tol
            for r in range(m):
                c = cand_j[r]
                if c < 0:
                    continue
                rc = cost[r, c] - dual[r] - dual[m + c]
                cand_rc[r] = rc
                if rc >= -tol:
                    cand_j[r] = -1
                elif rc < best:
                    best = rc
                    ei = r
                    ej = c
            if ei < 0:
                have_candidates = False
                if _refresh_candidates(cost, dual, m, n, tol, cand_j, cand_rc) == 0:
                    status = STATUS_OPTIMAL
                    break
                have_candidates = True
                for r in range(m):
                    if cand_j[r] >= 0 and cand_rc[r] < best:
                        best = cand_rc[r]
                        ei = r
                        ej = cand_j[r]
                if ei < 0:
                    status = STATUS_OPTIMAL
                    break
        else:
            # Bland's rule: first negative cell in index order
            done = False
            for r in range(m):
                du = dual[r]
                for c in range(n):
                    rc = cost[r, c] - du - dual[m + c]
                    if rc < -tol:
                        ei = r
                        ej = c
                        done = True
                        break
                if done:
                    break
            if ei < 0:
                status = STATUS_OPTIMAL
                break

        # --- cycle: walk both endpoints up to their LCA ---
        na = ei
        nb = m + ej
        la = 0
        lb = 0
        while depth[na] > depth[nb]:
            path_a[la] = na
            la += 1
            na = parent[na]
        while depth[nb] > depth[na]:
            path_b[lb] = nb
            lb += 1
            nb = parent[nb]
        while na != nb:
            path_a[la] = na
            la += 1
            na = parent[na]
            path_b[lb] = nb
            lb += 1
            nb = parent[nb]
        # Arcs t on either path alternate -,+,-,... starting with '-' at the
        # entering endpoints (bipartite paths have odd arc count, so the two
        # walks agree at the junction).
        theta = np.inf
        leave_side = 0
        leave_idx = -1
        for t in range(la):
            if t % 2 == 0:
                f = pflow[path_a[t]]
                if f < theta:
                    theta = f
                    leave_side = 0
                    leave_idx = t
        for t in range(lb):
            if t % 2 == 0:
                f = pflow[path_b[t]]
                if f < theta:
                    theta = f
                    leave_side = 1
                    leave_idx = t
        for t in range(la):
            if t % 2 == 0:
                pflow[path_a[t]] -= theta
            else:
                pflow[path_a[t]] += theta
        for t in range(lb):
            if t % 2 == 0:
                pflow[path_b[t]] -= theta
            else:
                pflow[path_b[t]] += theta

        # --- basis exchange: re-hang the detached subtree from the entering arc ---
        if leave_side == 0:
            start = ei
            new_parent = m + ej
            stop = path_a[leave_idx]
        else:
            start = m + ej
            new_parent = ei
            stop = path_b[leave_idx]
        node = start
        prev = new_parent
        carry = theta
        while True:
            nxt = parent[node]
            old_flow = pflow[node]
            parent[node] = prev
            pflow[node] = carry
            if node == stop:
                break
            prev = node
            carry = old_flow
            node = nxt

        _rebuild_tree(parent, order, depth, dual, cost, m, n,
                      child_off, child_buf, stack)

    rows = np.zeros(nn, dtype=np.int64)
    cols = np.zeros(nn, dtype=np.int64)
    vals = np.zeros(nn, dtype=np.float64)
    cnt = 0
    objective = 0.0
    for v in range(nn):
        p = parent[v]
        if p < 0:
            continue
        f = pflow[v]
        if f < 0.0:
            f = 0.0
        if v < m:
            r, c = v, p - m
        else:
            r, c = p, v - m
        objective += f * cost[r, c]
        if f > 0.0:
            rows[cnt] = r
            cols[cnt] = c
            vals[cnt] = f
            cnt += 1
    return rows[:cnt], cols[:cnt], vals[:cnt], objective, status
