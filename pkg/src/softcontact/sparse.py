"""Block-sparse symmetric matrices and a right-looking Cholesky that records
the Schur complement of the participating block on the way through.

Blocks are per node: 3x3 for mesh vertices, 1x1 for prismatic coordinates.
Only the lower triangle is stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a diagonal pivot block fails to factorize."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"non-positive pivot at dof {pivot}")


class BlockSparseSym:
    """Symmetric matrix over variable-size node blocks, lower triangle stored."""

    def __init__(self, lower: sp.spmatrix, block_sizes):
        self.block_sizes = np.asarray(block_sizes, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.block_sizes)])
        n = int(self.offsets[-1])
        if lower.shape != (n, n):
            raise ValueError(f"matrix shape {lower.shape} does not match blocks ({n})")
        self.lower = sp.tril(lower, format="csr")
        self.lower.sum_duplicates()
        self._full = None

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def num_blocks(self) -> int:
        return len(self.block_sizes)

    @classmethod
    def from_triplets(cls, rows, cols, vals, block_sizes) -> "BlockSparseSym":
        """Build from COO triplets of the full symmetric matrix (duplicates summed)."""
        sizes = np.asarray(block_sizes)
        n = int(sizes.sum())
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        keep = rows >= cols
        mat = sp.coo_matrix((np.asarray(vals)[keep], (rows[keep], cols[keep])), shape=(n, n))
        return cls(mat.tocsr(), sizes)

    @classmethod
    def from_dense(cls, dense, block_sizes) -> "BlockSparseSym":
        dense = np.asarray(dense, dtype=float)
        return cls(sp.csr_matrix(np.tril(dense)), block_sizes)

    def full(self) -> sp.csr_matrix:
        if self._full is None:
            diag = sp.diags(self.lower.diagonal())
            self._full = (self.lower + self.lower.T - diag).tocsr()
        return self._full

    def to_dense(self) -> np.ndarray:
        return self.full().toarray()

    def __matmul__(self, x):
        return self.full() @ x

    def combine(self, a: float, other: "BlockSparseSym", b: float) -> "BlockSparseSym":
        """Return a*self + b*other (same block layout)."""
        if not np.array_equal(self.block_sizes, other.block_sizes):
            raise ValueError("block layouts differ")
        return BlockSparseSym(a * self.lower + b * other.lower, self.block_sizes)

    def scaled(self, a: float) -> "BlockSparseSym":
        return BlockSparseSym(a * self.lower, self.block_sizes)

    def node_of_dof(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_blocks), self.block_sizes)

    def block_pattern(self) -> list[set[int]]:
        """Node adjacency (symmetric, self excluded) of the stored nonzeros."""
        coo = self.lower.tocoo()
        node = self.node_of_dof()
        bi, bj = node[coo.row], node[coo.col]
        mask = (bi != bj) & (coo.data != 0.0)
        adj: list[set[int]] = [set() for _ in range(self.num_blocks)]
        for i, j in set(zip(bi[mask].tolist(), bj[mask].tolist())):
            adj[i].add(j)
            adj[j].add(i)
        return adj


@dataclass
class PartitionPermutation:
    """Node order with non-participating nodes first, participating last.

    ``order[k]`` is the original node placed at position ``k``.
    """

    order: np.ndarray
    num_nodes_n: int
    block_sizes: np.ndarray  # original node sizes
    dofs: np.ndarray = field(init=False)  # new scalar position -> original dof

    def __post_init__(self):
        self.order = np.asarray(self.order, dtype=np.int64)
        self.block_sizes = np.asarray(self.block_sizes, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(self.block_sizes)])
        if sorted(self.order.tolist()) != list(range(len(self.block_sizes))):
            raise ValueError("order is not a permutation of the nodes")
        self.dofs = np.concatenate(
            [np.arange(offsets[i], offsets[i + 1]) for i in self.order]
        ).astype(np.int64) if len(self.order) else np.zeros(0, dtype=np.int64)

    @property
    def m_n(self) -> int:
        return int(self.block_sizes[self.order[: self.num_nodes_n]].sum())

    @property
    def m_p(self) -> int:
        return int(self.block_sizes[self.order[self.num_nodes_n:]].sum())

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.dofs)
        inv[self.dofs] = np.arange(len(self.dofs))
        return inv


def _minimum_degree(adj: list[set[int]], groups) -> list[int]:
    """Greedy minimum-degree elimination, one group after another.

    Fill edges created while eliminating earlier groups carry over into the
    degrees seen by later groups.
    """
    adj = [set(a) for a in adj]
    order = []
    for group in groups:
        remaining = set(int(g) for g in group)
        while remaining:
            k = min(remaining, key=lambda i: (len(adj[i]), i))
            nbrs = adj[k]
            for a in nbrs:
                adj[a] |= nbrs
                adj[a].discard(a)
                adj[a].discard(k)
            adj[k] = set()
            remaining.remove(k)
            order.append(k)
    return order


def order_within_partitions(pattern: list[set[int]], participating, block_sizes,
                            reorder: bool = True) -> PartitionPermutation:
    """Partition nodes into [non-participating | participating] and apply a
    minimum-degree ordering independently inside each range.

    ``participating`` is a boolean mask over nodes. With ``reorder=False`` the
    natural order is kept inside each range.
    """
    mask = np.asarray(participating, dtype=bool)
    n_nodes = np.flatnonzero(~mask)
    p_nodes = np.flatnonzero(mask)
    if reorder:
        order = _minimum_degree(pattern, [n_nodes, p_nodes])
    else:
        order = list(n_nodes) + list(p_nodes)
    return PartitionPermutation(np.array(order, dtype=np.int64), len(n_nodes), block_sizes)


def symbolic_factorization(pattern: list[set[int]], order) -> list[list[int]]:
    """Column structures of the block Cholesky factor under ``order``.

    Returns, for each new position k, the sorted list of positions j >= k
    with a structurally nonzero block L[j, k].
    """
    order = list(order)
    pos = {node: k for k, node in enumerate(order)}
    n = len(order)
    struct: list[list[int]] = []
    children: list[list[int]] = [[] for _ in range(n)]
    for k in range(n):
        rows = {pos[a] for a in pattern[order[k]] if pos[a] > k}
        for c in children[k]:
            rows.update(j for j in struct[c] if j > k)
        col = [k] + sorted(rows)
        struct.append(col)
        if len(col) > 1:
            children[col[1]].append(k)
    return struct


def fill_in(pattern: list[set[int]], order) -> int:
    """Number of block fill entries in L beyond the lower pattern of A."""
    struct = symbolic_factorization(pattern, order)
    nnz_l = sum(len(c) - 1 for c in struct)
    nnz_a = sum(len(a) for a in pattern) // 2
    return nnz_l - nnz_a


class CholeskyWithSchur:
    """Block Cholesky factor of P A P^T plus the recorded Schur complement.

    ``schur`` is dense, ordered as ``participating_dofs``.
    """

    def __init__(self, perm: PartitionPermutation, sizes, offsets, struct, rows, vals,
                 schur: np.ndarray, fill: int):
        self.perm = perm
        self._sizes = sizes
        self._offsets = offsets
        self._struct = struct
        self._rows = rows
        self._vals = vals
        self.schur = schur
        self.fill_in = fill
        self.solve_count = 0

    @property
    def n(self) -> int:
        return int(self._offsets[-1])

    @property
    def m_n(self) -> int:
        return self.perm.m_n

    @property
    def m_p(self) -> int:
        return self.perm.m_p

    @property
    def nonparticipating_dofs(self) -> np.ndarray:
        return self.perm.dofs[: self.m_n]

    @property
    def participating_dofs(self) -> np.ndarray:
        return self.perm.dofs[self.m_n:]

    def lower_matrix(self) -> sp.csr_matrix:
        """L in the permuted ordering as a scipy sparse matrix."""
        r, c, v = [], [], []
        for k, (rows, vals) in enumerate(zip(self._rows, self._vals)):
            s = self._sizes[k]
            cols = np.arange(self._offsets[k], self._offsets[k] + s)
            rr = np.repeat(rows, s)
            cc = np.tile(cols, len(rows))
            keep = rr >= cc
            r.append(rr[keep])
            c.append(cc[keep])
            v.append(vals.ravel()[keep])
        n = self.n
        if not r:
            return sp.csr_matrix((n, n))
        return sp.coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                             shape=(n, n)).tocsr()

    def blocks(self):
        """Dense (L_nn, L_pn, L_pp) in the permuted ordering."""
        L = self.lower_matrix().toarray()
        m = self.m_n
        return L[:m, :m], L[m:, :m], L[m:, m:]

    def _forward(self, y):
        for k in range(len(self._sizes)):
            s = self._sizes[k]
            o = self._offsets[k]
            V = self._vals[k]
            y[o:o + s] = scipy.linalg.solve_triangular(V[:s], y[o:o + s], lower=True,
                                                       check_finite=False)
            if V.shape[0] > s:
                y[self._rows[k][s:]] -= V[s:] @ y[o:o + s]
        return y

    def _backward(self, x, stop: int = 0, start: int | None = None):
        start = len(self._sizes) if start is None else start
        for k in range(start - 1, stop - 1, -1):
            s = self._sizes[k]
            o = self._offsets[k]
            V = self._vals[k]
            rhs = x[o:o + s]
            if V.shape[0] > s:
                rhs = rhs - V[s:].T @ x[self._rows[k][s:]]
            x[o:o + s] = scipy.linalg.solve_triangular(V[:s], rhs, lower=True, trans="T",
                                                       check_finite=False)
        return x

    def solve(self, rhs) -> np.ndarray:
        """Solve A x = rhs in the original ordering."""
        rhs = np.asarray(rhs, dtype=float)
        y = rhs[self.perm.dofs].copy()
        self._forward(y)
        self._backward(y)
        out = np.empty_like(y)
        out[self.perm.dofs] = y
        self.solve_count += 1
        return out

    def recover_nonparticipating(self, dv_p) -> np.ndarray:
        """Return dv_n = -A_nn^{-1} A_np dv_p (both in permuted order).

        Uses A_nn^{-1} A_np = L_nn^{-T} L_pn^T, i.e. one backward sweep over
        the non-participating columns with the participating tail fixed.
        """
        dv_p = np.asarray(dv_p, dtype=float)
        m = self.m_n
        x = np.zeros((self.n,) + dv_p.shape[1:])
        x[m:] = dv_p
        self._backward(x, stop=0, start=self.perm.num_nodes_n)
        return x[:m]

    def scatter(self, dv_n, dv_p) -> np.ndarray:
        """Combine permuted partition vectors into one vector in original order."""
        out = np.empty(self.n)
        out[self.nonparticipating_dofs] = dv_n
        out[self.participating_dofs] = dv_p
        return out


def _factorize(A: BlockSparseSym, perm: PartitionPermutation, boost: float) -> CholeskyWithSchur:
    sizes = A.block_sizes[perm.order]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    pattern = A.block_pattern()
    struct = symbolic_factorization(pattern, perm.order)
    Ap = A.full()[perm.dofs][:, perm.dofs].tocsc()
    N = len(sizes)

    rows, vals = [], []
    for k in range(N):
        r = np.concatenate([np.arange(offsets[j], offsets[j] + sizes[j]) for j in struct[k]])
        col = Ap[:, offsets[k]:offsets[k + 1]].toarray()[r]
        if boost:
            col[np.arange(sizes[k]), np.arange(sizes[k])] += boost
        rows.append(r)
        vals.append(col)

    nn = perm.num_nodes_n
    p0 = int(offsets[nn])
    m_p = int(offsets[-1]) - p0
    schur = np.zeros((m_p, m_p))

    def record():
        for j in range(nn, N):
            s = sizes[j]
            cj = np.arange(offsets[j], offsets[j] + s) - p0
            rj = rows[j] - p0
            schur[np.ix_(rj, cj)] = vals[j]
            schur[np.ix_(cj, rj[s:])] = vals[j][s:].T

    for k in range(N):
        if k == nn:
            record()
        s = sizes[k]
        V = vals[k]
        try:
            Lkk = np.linalg.cholesky(V[:s])
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(int(perm.dofs[offsets[k]])) from None
        V[:s] = Lkk
        if V.shape[0] == s:
            continue
        below = scipy.linalg.solve_triangular(Lkk, V[s:].T, lower=True, check_finite=False).T
        V[s:] = below
        a = 0
        for j in struct[k][1:]:
            sj = sizes[j]
            Ljk = below[a:a + sj]
            tail = below[a:]
            pos = np.searchsorted(rows[j], rows[k][s + a:])
            vals[j][pos] -= tail @ Ljk.T
            a += sj
    if nn == N:
        record()

    fill = sum(len(c) - 1 for c in struct) - sum(len(x) for x in pattern) // 2
    return CholeskyWithSchur(perm, sizes, offsets, struct, rows, vals, schur, fill)


def factorize_with_schur(A: BlockSparseSym, perm: PartitionPermutation,
                         jitter: bool = False) -> CholeskyWithSchur:
    """Right-looking block Cholesky of the permuted A, recording the Schur
    complement of A_nn once all non-participating columns are eliminated.

    With ``jitter`` a failed factorization is retried once with the diagonal
    raised by 1e-12 * trace(A) / n.
    """
    try:
        return _factorize(A, perm, 0.0)
    except NotPositiveDefinite:
        if not jitter:
            raise
        boost = 1e-12 * float(A.lower.diagonal().sum()) / max(A.n, 1)
        return _factorize(A, perm, boost)


def solve_full(factor: CholeskyWithSchur, rhs) -> np.ndarray:
    return factor.solve(rhs)


def recover_nonparticipating(factor: CholeskyWithSchur, dv_p) -> np.ndarray:
    return factor.recover_nonparticipating(dv_p)


def dump_matrix_market(path, matrix, comment: str = "") -> None:
    """Write a sparse (or BlockSparseSym) matrix as matrix-market coordinate text."""
    if isinstance(matrix, BlockSparseSym):
        matrix = matrix.lower
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
