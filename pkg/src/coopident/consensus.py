"""Average consensus where every node keeps its value in its own coordinates.

Node ``i`` holds ``x_i``; ``A_ij`` re-expresses a value of node ``j`` in the
coordinates of node ``i``.  With ``A_ii = I`` and ``A_ij = A_ik A_kj`` the
forward-Euler rounds

    x_i <- x_i + eta * sum_{j in N_i} (A_ij x_j - x_i)

drive every node to ``(1/n) sum_j A_ij x_j(0)``, the network average seen from
node ``i``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsensusError


def _is_connected(n, adjacency):
    seen = {0}
    todo = deque([0])
    while todo:
        i = todo.popleft()
        for j in adjacency[i]:
            if j not in seen:
                seen.add(j)
                todo.append(j)
    return len(seen) == n


class RobotNetwork:
    """Undirected communication graph with per-edge coordinate transforms.

    ``transforms`` maps an ordered pair ``(i, j)`` to ``A_ij``.  Only one
    direction per edge is required; the other defaults to the inverse.
    """

    def __init__(self, n, edges, transforms=None, dim=None, cocycle_tol=1e-8, eta=None):
        self.n = int(n)
        self.edges = sorted({(min(i, j), max(i, j)) for i, j in edges if i != j})
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ConsensusError(f"edge {(i, j)} references a missing node")
        self.neighbors = [[] for _ in range(self.n)]
        for i, j in self.edges:
            self.neighbors[i].append(j)
            self.neighbors[j].append(i)
        if self.n > 1 and not _is_connected(self.n, self.neighbors):
            raise ConsensusError("communication graph is not connected")

        transforms = dict(transforms or {})
        if dim is None:
            dim = next(iter(transforms.values())).shape[0] if transforms else 1
        self.dim = int(dim)
        self.A = {}
        for i, j in self.edges:
            A_ij = transforms.get((i, j))
            A_ji = transforms.get((j, i))
            if A_ij is None and A_ji is None:
                A_ij = A_ji = np.eye(self.dim)
            elif A_ij is None:
                A_ij = np.linalg.inv(A_ji)
            elif A_ji is None:
                A_ji = np.linalg.inv(A_ij)
            self.A[(i, j)] = np.asarray(A_ij, dtype=float)
            self.A[(j, i)] = np.asarray(A_ji, dtype=float)
        for i, j in self.edges:
            err = np.max(np.abs(self.A[(i, j)] @ self.A[(j, i)] - np.eye(self.dim)))
            if err > 1e-10 * max(1.0, np.max(np.abs(self.A[(i, j)]))) ** 2:
                raise ConsensusError(f"A_{i}{j} A_{j}{i} deviates from identity by {err:.3e}")

        self.cocycle_violation = self._cocycle_violation()
        if self.cocycle_violation > cocycle_tol:
            raise ConsensusError(
                f"transforms violate A_ij = A_ik A_kj by {self.cocycle_violation:.3e}")

        self.max_degree = max((len(nb) for nb in self.neighbors), default=0)
        self.eta = 1.0 / (self.max_degree + 1) if eta is None else float(eta)
        if self.max_degree and not 0.0 < self.eta <= 1.0 / self.max_degree:
            raise ConsensusError(f"step size {self.eta} outside (0, 1/deg_max]")
        self._M = self._round_matrix()

    def _cocycle_violation(self):
        worst = 0.0
        adj = [set(nb) for nb in self.neighbors]
        for i, j in self.edges:
            for k in adj[i] & adj[j]:
                d = self.A[(i, k)] @ self.A[(k, j)] - self.A[(i, j)]
                worst = max(worst, float(np.max(np.abs(d))))
        return worst

    def _round_matrix(self):
        d = self.dim
        M = np.eye(self.n * d)
        for i in range(self.n):
            bi = slice(i * d, (i + 1) * d)
            M[bi, bi] -= self.eta * len(self.neighbors[i]) * np.eye(d)
            for j in self.neighbors[i]:
                M[bi, j * d:(j + 1) * d] += self.eta * self.A[(i, j)]
        return M

    def disagreement(self, values):
        """``max_i |sum_{j in N_i} (A_ij x_j - x_i)|``."""
        worst = 0.0
        for i in range(self.n):
            r = np.zeros(self.dim)
            for j in self.neighbors[i]:
                r += self.A[(i, j)] @ values[j] - values[i]
            worst = max(worst, float(np.linalg.norm(r)))
        return worst


def consensus_step(net, values):
    """One synchronous round; block ``(i, j)`` of the round matrix is nonzero
    only for ``j`` in ``N_i`` so nodes use one-hop information only."""
    x = np.asarray(values, dtype=float).reshape(net.n * net.dim)
    return (net._M @ x).reshape(net.n, net.dim)


@dataclass
class ConsensusResult:
    values: np.ndarray
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)


def run_consensus(net, values, tol=1e-10, max_iters=200, strict=False):
    """Iterate rounds until the disagreement drops below ``tol``.

    With ``strict`` a :class:`ConsensusError` carrying the last residual is
    raised on non-convergence; otherwise ``converged`` is False.
    """
    x = np.array(values, dtype=float).reshape(net.n, net.dim)
    if net.n == 1:
        return ConsensusResult(x, True, 0, [0.0])
    d = net.dim
    M = net._M
    # blocks of the disagreement: D x = (M - I) x / eta
    flat = x.reshape(-1)
    residuals = []
    for it in range(max_iters + 1):
        delta = (M @ flat - flat)
        res = float(np.max(np.linalg.norm(delta.reshape(net.n, d), axis=1))) / net.eta
        residuals.append(res)
        if res < tol:
            return ConsensusResult(flat.reshape(net.n, d), True, it, residuals)
        if it == max_iters:
            break
        flat = flat + delta
    if strict:
        raise ConsensusError(f"consensus did not converge in {max_iters} rounds "
                             f"(residual {residuals[-1]:.3e})", residuals[-1], max_iters)
    return ConsensusResult(flat.reshape(net.n, d), False, max_iters, residuals)


def total_wrench(net, local_wrenches, n_known, tol=1e-10, max_iters=200, strict=False):
    """Total wrench at every node: ``n`` times the consensus average.

    ``net`` must carry ``A_ij = Ad_{g_ji}^T`` (6x6).  Returns ``(wrenches, result)``.
    """
    res = run_consensus(net, local_wrenches, tol, max_iters, strict)
    return n_known * res.values, res
