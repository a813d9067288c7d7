"""Cosine-similarity cost matrices and exact rectangular linear assignment.

The solver is a dense Jonker-Volkgenant-style shortest-augmenting-path
implementation (the same family as the classic LAPJV / scipy solver),
maximizing total similarity via cost negation.  It is exact, and its
tie-breaking among equally good assignments is fixed by the deterministic
lowest-index traversal order -- results downstream (rank correlations of
the returned assignment) depend on that determinism.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ValidationError


def cosine_similarity_matrix(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity between the rows of two matrices.

    Zero-norm rows get similarity 0 to everything by convention, so padded
    or pruned-away rows never dominate a matching.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.ndim != 2 or w2.ndim != 2:
        raise DimensionError("similarity inputs must be 2-D matrices")
    if w1.shape[1] != w2.shape[1]:
        raise DimensionError(
            f"row dimensionality mismatch: {w1.shape[1]} vs {w2.shape[1]}"
        )
    if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
        raise ValidationError("similarity inputs must be finite")
    n1 = np.linalg.norm(w1, axis=1)
    n2 = np.linalg.norm(w2, axis=1)
    sim = w1 @ w2.T
    denom = np.outer(n1, n2)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0.0, sim / np.where(denom > 0.0, denom, 1.0), 0.0)
    # guard against rounding pushing |cos| epsilon past 1
    return np.clip(sim, -1.0, 1.0)


def _shortest_augmenting_paths(
    cost: np.ndarray, return_duals: bool = False
):
    """Minimize assignment cost for cost with n_rows <= n_cols.

    Returns col4row, the column assigned to each row.  Ports the standard
    dense shortest-augmenting-path algorithm with dual potentials; all
    scans run lowest-index first, which fixes tie-breaking.  With
    ``return_duals`` the final potentials come back too; they certify
    optimality by weak duality.
    """
    nr, nc = cost.shape
    u = np.zeros(nr)
    v = np.zeros(nc)
    col4row = np.full(nr, -1, dtype=np.int64)
    row4col = np.full(nc, -1, dtype=np.int64)

    for cur_row in range(nr):
        shortest = np.full(nc, np.inf)
        path = np.full(nc, -1, dtype=np.int64)
        done_cols = np.zeros(nc, dtype=bool)
        visited_rows = np.zeros(nr, dtype=bool)
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            visited_rows[i] = True
            reduced = min_val + cost[i] - u[i] - v
            better = (~done_cols) & (reduced < shortest)
            shortest[better] = reduced[better]
            path[better] = i
            masked = np.where(done_cols, np.inf, shortest)
            j = int(np.argmin(masked))
            min_val = masked[j]
            if not np.isfinite(min_val):
                raise ValidationError("assignment problem is infeasible")
            done_cols[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
        # update dual potentials along the alternating tree
        u[cur_row] += min_val
        other = visited_rows.copy()
        other[cur_row] = False
        if other.any():
            rows = np.nonzero(other)[0]
            u[rows] += min_val - shortest[col4row[rows]]
        v[done_cols] -= min_val - shortest[done_cols]
        # augment: flip the alternating path back to cur_row
        while True:
            i = int(path[sink])
            row4col[sink] = i
            col4row[i], sink = sink, col4row[i]
            if i == cur_row:
                break
    if return_duals:
        return col4row, u, v
    return col4row


def solve_lap_with_certificate(sim: np.ndarray):
    """Square maximum assignment plus dual potentials certifying optimality.

    The returned (u, v) satisfy u_i + v_j <= sim_ij for all pairs with
    equality summed over the assignment, so by weak LP duality the
    assignment value is provably maximal.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise DimensionError("certificates are provided for square problems")
    col4row, u, v = _shortest_augmenting_paths(-sim, return_duals=True)
    return col4row, -u, -v


def solve_lap(sim: np.ndarray) -> np.ndarray:
    """Exact maximum-similarity assignment for a (possibly rectangular) matrix.

    Each row of the smaller side is matched to a distinct index of the
    larger side.  The returned array is indexed by the smaller side: for an
    (h1, h2) matrix with h1 <= h2 entry i is the matched column of row i;
    with h1 > h2 entry j is the matched row of column j.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or 0 in sim.shape:
        raise DimensionError("similarity matrix must be 2-D and non-empty")
    if not np.isfinite(sim).all():
        raise ValidationError("similarity matrix must be finite")
    if sim.shape[0] <= sim.shape[1]:
        return _shortest_augmenting_paths(-sim)
    return _shortest_augmenting_paths(-sim.T)


def assignment_value(sim: np.ndarray, assignment: np.ndarray) -> float:
    """Total similarity of an assignment as returned by solve_lap."""
    sim = np.asarray(sim, dtype=np.float64)
    idx = np.arange(len(assignment))
    if sim.shape[0] <= sim.shape[1]:
        return float(sim[idx, assignment].sum())
    return float(sim[assignment, idx].sum())


def match_rows(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Align hidden units of two matrices by cosine similarity.

    Equivalent to zero-padding the narrower side and solving the square
    problem: padded rows have similarity 0 to everything, so they never
    displace a real match and the rectangular solve gives the same answer.
    """
    return solve_lap(cosine_similarity_matrix(w1, w2))
