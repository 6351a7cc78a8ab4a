"""Exact discrete optimal transport at toy scale, used to validate the fast methods."""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np
from scipy.optimize import linear_sum_assignment

from pmelab.transport.types import AtomicMeasure, TransportResult, torus_sq_cost

MAX_ATOMS = 64
EXHAUSTIVE_MAX = 8


class OracleSizeError(ValueError):
    pass


def plan_cost(plan: np.ndarray, cost: np.ndarray) -> float:
    return float(np.sum(plan * cost))


def exhaustive_assignment(cost: np.ndarray) -> np.ndarray:
    """Best permutation plan by enumeration; returns the plan with weights 1/n."""
    n = cost.shape[0]
    best, best_perm = math.inf, None
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        c = cost[rows, perm].sum()
        if c < best:
            best, best_perm = c, perm
    plan = np.zeros_like(cost)
    plan[rows, list(best_perm)] = 1.0 / n
    return plan


def hungarian_assignment(cost: np.ndarray) -> np.ndarray:
    r, c = linear_sum_assignment(cost)
    plan = np.zeros_like(cost)
    plan[r, c] = 1.0 / cost.shape[0]
    return plan


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic solution with exactly m + n - 1 basic cells (degenerate zeros kept)."""
    m, n = a.size, b.size
    x = np.zeros((m, n))
    basis = []
    sa, sb = a.copy(), b.copy()
    i = j = 0
    while i < m and j < n:
        q = min(sa[i], sb[j])
        x[i, j] = q
        basis.append((i, j))
        sa[i] -= q
        sb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # advance exactly one index so the basis stays a spanning tree
        if (sa[i] <= sb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _tree_path(basis, m: int, n: int, src_row: int, dst_col: int):
    """Edges on the basis tree from row node ``src_row`` to column node ``dst_col``."""
    adj = [[] for _ in range(m + n)]
    for (i, j) in basis:
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    prev = {src_row: None}
    queue = deque([src_row])
    target = m + dst_col
    while queue:
        node = queue.popleft()
        if node == target:
            break
        for nxt, edge in adj[node]:
            if nxt not in prev:
                prev[nxt] = (node, edge)
                queue.append(nxt)
    if target not in prev:
        raise RuntimeError("basis is not a spanning tree")
    path = []
    node = target
    while prev[node] is not None:
        node, edge = prev[node]
        path.append(edge)
    return path[::-1]


def network_simplex(a, b, cost: np.ndarray, max_iter: int = 100000, tol: float = 1e-13):
    """Transportation simplex (MODI potentials) on the complete bipartite graph.

    Entering cell: most negative reduced cost; after a run of degenerate pivots
    the rule switches to Bland's (first negative), which cannot cycle.
    Returns ``(plan, iterations)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    b = b * (a.sum() / b.sum())
    m, n = a.size, b.size
    x, basis = _northwest_corner(a, b)
    degenerate_run = 0
    for it in range(max_iter):
        # potentials: u_i + v_j = c_ij on the basis, u_0 = 0
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        pending = list(basis)
        while pending:
            rest = []
            for (i, j) in pending:
                if not np.isnan(u[i]) and np.isnan(v[j]):
                    v[j] = cost[i, j] - u[i]
                elif np.isnan(u[i]) and not np.isnan(v[j]):
                    u[i] = cost[i, j] - v[j]
                elif np.isnan(u[i]) and np.isnan(v[j]):
                    rest.append((i, j))
            if len(rest) == len(pending):
                raise RuntimeError("disconnected basis")
            pending = rest
        reduced = cost - u[:, None] - v[None, :]
        scale = max(1.0, float(np.abs(cost).max()))
        neg = reduced < -tol * scale
        if not neg.any():
            return x, it
        if degenerate_run > 2 * (m + n):
            flat = int(np.flatnonzero(neg.ravel())[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, n)
        path = _tree_path(basis, m, n, ei, ej)
        # cycle: entering (+), then alternate - + - ... along the path row->col
        minus = path[0::2]
        plus = path[1::2]
        step = min(x[c] for c in minus)
        leaving_candidates = [c for c in minus if x[c] <= step]
        leaving = min(leaving_candidates)  # Bland tie-break by index
        for c in minus:
            x[c] -= step
        for c in plus:
            x[c] += step
        x[ei, ej] += step
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        degenerate_run = degenerate_run + 1 if step == 0 else 0
    raise RuntimeError("network simplex: iteration limit reached")


def lp_oracle(u: AtomicMeasure, v: AtomicMeasure, method: str = "auto") -> TransportResult:
    """Exact OT cost with squared torus distance; ``method`` in auto/exhaustive/hungarian/network_simplex."""
    if u.size + v.size > MAX_ATOMS:
        raise OracleSizeError(f"{u.size + v.size} atoms exceed the oracle limit {MAX_ATOMS}")
    if u.dim != v.dim:
        raise ValueError("measures live in different dimensions")
    cost = torus_sq_cost(u.points, v.points)
    equal = (u.size == v.size and np.allclose(u.weights, 1.0 / u.size, rtol=0, atol=1e-15)
             and np.allclose(v.weights, 1.0 / v.size, rtol=0, atol=1e-15))
    if method == "auto":
        method = ("exhaustive" if u.size <= EXHAUSTIVE_MAX else "hungarian") if equal else "network_simplex"
    iterations = 0
    if method in ("exhaustive", "hungarian"):
        if not equal:
            raise ValueError(f"{method} needs equal-weight equal-count measures")
        if method == "exhaustive":
            if u.size > EXHAUSTIVE_MAX:
                raise OracleSizeError(f"exhaustive enumeration limited to {EXHAUSTIVE_MAX} atoms")
            plan = exhaustive_assignment(cost)
        else:
            plan = hungarian_assignment(cost)
    elif method == "network_simplex":
        plan, iterations = network_simplex(u.weights, v.weights, cost)
    else:
        raise ValueError(f"unknown oracle method {method!r}")
    total = max(plan_cost(plan, cost), 0.0)
    return TransportResult(math.sqrt(total), "lp_oracle",
                           {"cost": total, "solver": method, "iterations": iterations}, plan=plan)
