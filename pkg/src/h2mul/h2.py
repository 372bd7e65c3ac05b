"""Nested cluster bases and the H^2-matrix container with its kernels."""

from __future__ import annotations

import json

import numpy as np

from .dense import truncated_svd
from .errors import InvalidInputError
from .trees import BlockTree, ClusterTree, same_cluster_tree

__all__ = [
    "ClusterBasis",
    "BasisProduct",
    "H2Matrix",
    "expand_basis",
    "orthogonalize_basis",
    "cluster_basis_product",
    "h2_matvec",
    "h2_matvec_adjoint",
    "to_dense",
    "matvec_cost",
    "storage_bytes",
    "h2_to_json",
    "h2_from_json",
]

DENSE_GUARD = 16384


class ClusterBasis:
    """Family (V_t) of per-cluster matrices nested through transfer matrices.

    Leaves store V_t explicitly (size_t x k_t); above a leaf only the
    transfer matrix E_t (k_t x k_parent) is kept, so nestedness holds by
    construction.  Ranks may vary per cluster and may be zero.
    """

    def __init__(self, tree: ClusterTree, rank, leaf_matrix, transfer):
        self.tree = tree
        self.rank = list(rank)
        self.leaf_matrix = leaf_matrix  # leaf id -> (size, k)
        self.transfer = transfer        # child id -> (k_child, k_parent)

    def expand(self, t: int) -> np.ndarray:
        """Explicit size_t x k_t matrix obtained by stacking transfers."""
        tree = self.tree
        if tree.is_leaf(t):
            return self.leaf_matrix[t]
        return np.vstack([self.expand(c) @ self.transfer[c]
                          for c in tree.children[t]])

    def gram(self, t: int) -> np.ndarray:
        """V_t^T V_t computed by the transfer recursion (no expansion)."""
        tree = self.tree
        if tree.is_leaf(t):
            v = self.leaf_matrix[t]
            return v.T @ v
        g = np.zeros((self.rank[t], self.rank[t]))
        for c in tree.children[t]:
            e = self.transfer[c]
            g += e.T @ self.gram(c) @ e
        return g

    def max_rank(self) -> int:
        return max(self.rank) if self.rank else 0

    def storage_bytes(self) -> int:
        total = sum(m.nbytes for m in self.leaf_matrix.values())
        total += sum(m.nbytes for m in self.transfer.values())
        return total


def expand_basis(basis: ClusterBasis, t: int) -> np.ndarray:
    return basis.expand(t)


def orthogonalize_basis(basis: ClusterBasis):
    """Isometric re-factorization of a cluster basis.

    Returns ``(q, rmap)`` with expand(q, t) @ rmap[t] == expand(basis, t)
    and isometric per-cluster q.  Exact zero directions are dropped, so
    rank-deficient inputs come back with reduced ranks.
    """
    tree = basis.tree
    rank = [0] * tree.nnodes
    leaf_matrix: dict[int, np.ndarray] = {}
    transfer: dict[int, np.ndarray] = {}
    rmap: dict[int, np.ndarray] = {}

    def rec(t):
        if tree.is_leaf(t):
            stacked = basis.leaf_matrix[t]
        else:
            for c in tree.children[t]:
                rec(c)
            stacked = np.vstack([rmap[c] @ basis.transfer[c]
                                 for c in tree.children[t]])
        svd = truncated_svd(stacked, 0.0)
        q = svd.u
        rmap[t] = svd.sigma[:, None] * svd.v.T
        rank[t] = svd.retained_rank
        if tree.is_leaf(t):
            leaf_matrix[t] = q
        else:
            offset = 0
            for c in tree.children[t]:
                transfer[c] = q[offset:offset + rank[c]]
                offset += rank[c]

    rec(tree.root)
    return ClusterBasis(tree, rank, leaf_matrix, transfer), rmap


class BasisProduct:
    """Per-cluster products P_s = W_s^T V_s of two bases over one tree."""

    def __init__(self, tree: ClusterTree, p: dict[int, np.ndarray]):
        self.tree = tree
        self.p = p

    def transposed(self) -> "BasisProduct":
        return BasisProduct(self.tree, {s: m.T for s, m in self.p.items()})


def cluster_basis_product(wx: ClusterBasis, vy: ClusterBasis) -> BasisProduct:
    """Recursive computation of W_X,s^T V_Y,s for every cluster s."""
    if not same_cluster_tree(wx.tree, vy.tree):
        raise InvalidInputError("bases live on different cluster trees")
    tree = wx.tree
    p: dict[int, np.ndarray] = {}

    def rec(s):
        if tree.is_leaf(s):
            p[s] = wx.leaf_matrix[s].T @ vy.leaf_matrix[s]
            return
        acc = np.zeros((wx.rank[s], vy.rank[s]))
        for c in tree.children[s]:
            rec(c)
            acc += wx.transfer[c].T @ p[c] @ vy.transfer[c]
        p[s] = acc

    rec(tree.root)
    return BasisProduct(tree, p)


class H2Matrix:
    """Block tree + row/column bases + couplings and dense nearfield blocks.

    ``coupling`` maps admissible leaf block ids to k_t x k_s coupling
    matrices, ``nearfield`` maps inadmissible leaf block ids to dense
    blocks.  Instances are immutable after assembly; concurrent reads
    (matvec) are safe.
    """

    def __init__(self, block_tree: BlockTree, row_basis: ClusterBasis,
                 col_basis: ClusterBasis, coupling, nearfield):
        self.block_tree = block_tree
        self.row_basis = row_basis
        self.col_basis = col_basis
        self.coupling = coupling
        self.nearfield = nearfield

    @property
    def shape(self) -> tuple[int, int]:
        return (self.block_tree.rows.npoints, self.block_tree.cols.npoints)

    def transposed(self) -> "H2Matrix":
        return H2Matrix(self.block_tree.transposed(),
                        self.col_basis, self.row_basis,
                        {b: s.T for b, s in self.coupling.items()},
                        {b: m.T for b, m in self.nearfield.items()})

    def validate(self):
        """Check the coupling/nearfield placement and all dimensions."""
        bt = self.block_tree
        for b in range(bt.nblocks):
            t, s = bt.row[b], bt.col[b]
            if bt.is_admissible_leaf(b):
                if b not in self.coupling:
                    raise InvalidInputError(f"admissible leaf {b} lacks coupling")
                if self.coupling[b].shape != (self.row_basis.rank[t],
                                              self.col_basis.rank[s]):
                    raise InvalidInputError(f"coupling {b} has wrong shape")
            elif bt.is_inadmissible_leaf(b):
                if b not in self.nearfield:
                    raise InvalidInputError(f"inadmissible leaf {b} lacks nearfield")
                if self.nearfield[b].shape != (bt.rows.size(t), bt.cols.size(s)):
                    raise InvalidInputError(f"nearfield {b} has wrong shape")
        extra = set(self.coupling) - set(bt.admissible_leaves())
        extra |= set(self.nearfield) - set(bt.inadmissible_leaves())
        if extra:
            raise InvalidInputError(f"matrices attached to non-leaf blocks: {extra}")


def _forward_coefficients(basis: ClusterBasis, x: np.ndarray) -> list[np.ndarray]:
    """Bottom-up transform xhat_s = V_s^T x|s for every cluster."""
    tree = basis.tree
    xhat: list[np.ndarray | None] = [None] * tree.nnodes
    for s in reversed(range(tree.nnodes)):
        if tree.is_leaf(s):
            xhat[s] = basis.leaf_matrix[s].T @ x[tree.start[s]:tree.stop[s]]
        else:
            acc = np.zeros(basis.rank[s])
            for c in tree.children[s]:
                acc += basis.transfer[c].T @ xhat[c]
            xhat[s] = acc
    return xhat


def _backward_coefficients(basis: ClusterBasis, yhat, y: np.ndarray,
                           alpha: float):
    """Top-down transform adding alpha * V_t yhat_t into y."""
    tree = basis.tree
    for t in range(tree.nnodes):
        if tree.is_leaf(t):
            y[tree.start[t]:tree.stop[t]] += alpha * (basis.leaf_matrix[t] @ yhat[t])
        else:
            for c in tree.children[t]:
                yhat[c] += basis.transfer[c] @ yhat[t]


def h2_matvec(g: H2Matrix, x, y=None, alpha: float = 1.0) -> np.ndarray:
    """y <- y + alpha * G @ x in O(n k) operations."""
    x = np.asarray(x, dtype=np.float64)
    nrows, ncols = g.shape
    if x.shape != (ncols,):
        raise InvalidInputError(f"x has shape {x.shape}, expected ({ncols},)")
    if y is None:
        y = np.zeros(nrows)
    elif y.shape != (nrows,):
        raise InvalidInputError(f"y has shape {y.shape}, expected ({nrows},)")
    bt = g.block_tree
    xhat = _forward_coefficients(g.col_basis, x)
    yhat = [np.zeros(k) for k in g.row_basis.rank]
    for b, s_ts in g.coupling.items():
        yhat[bt.row[b]] += s_ts @ xhat[bt.col[b]]
    _backward_coefficients(g.row_basis, yhat, y, alpha)
    rows, cols = bt.rows, bt.cols
    for b, m in g.nearfield.items():
        t, s = bt.row[b], bt.col[b]
        y[rows.start[t]:rows.stop[t]] += alpha * (m @ x[cols.start[s]:cols.stop[s]])
    return y


def h2_matvec_adjoint(g: H2Matrix, x, y=None, alpha: float = 1.0) -> np.ndarray:
    """y <- y + alpha * G^T @ x, mirroring h2_matvec with bases swapped."""
    x = np.asarray(x, dtype=np.float64)
    nrows, ncols = g.shape
    if x.shape != (nrows,):
        raise InvalidInputError(f"x has shape {x.shape}, expected ({nrows},)")
    if y is None:
        y = np.zeros(ncols)
    elif y.shape != (ncols,):
        raise InvalidInputError(f"y has shape {y.shape}, expected ({ncols},)")
    bt = g.block_tree
    xhat = _forward_coefficients(g.row_basis, x)
    yhat = [np.zeros(k) for k in g.col_basis.rank]
    for b, s_ts in g.coupling.items():
        yhat[bt.col[b]] += s_ts.T @ xhat[bt.row[b]]
    _backward_coefficients(g.col_basis, yhat, y, alpha)
    rows, cols = bt.rows, bt.cols
    for b, m in g.nearfield.items():
        t, s = bt.row[b], bt.col[b]
        y[cols.start[s]:cols.stop[s]] += alpha * (m.T @ x[rows.start[t]:rows.stop[t]])
    return y


def to_dense(g: H2Matrix, guard: int = DENSE_GUARD) -> np.ndarray:
    """Explicit dense matrix; guarded against accidental large conversions."""
    nrows, ncols = g.shape
    if max(nrows, ncols) > guard:
        raise InvalidInputError(f"dense conversion of size {g.shape} refused "
                                f"(guard {guard})")
    bt = g.block_tree
    out = np.zeros((nrows, ncols))
    rows, cols = bt.rows, bt.cols
    for b, s_ts in g.coupling.items():
        t, s = bt.row[b], bt.col[b]
        block = g.row_basis.expand(t) @ s_ts @ g.col_basis.expand(s).T
        out[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]] += block
    for b, m in g.nearfield.items():
        t, s = bt.row[b], bt.col[b]
        out[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]] += m
    return out


def matvec_cost(g: H2Matrix) -> int:
    """Multiply-add count of one matvec (structural, not measured)."""
    cost = 0
    for basis in (g.row_basis, g.col_basis):
        tree = basis.tree
        for t in range(tree.nnodes):
            if tree.is_leaf(t):
                cost += tree.size(t) * basis.rank[t]
            else:
                for c in tree.children[t]:
                    cost += basis.rank[c] * basis.rank[t]
    for b, s_ts in g.coupling.items():
        cost += s_ts.shape[0] * s_ts.shape[1]
    for b, m in g.nearfield.items():
        cost += m.shape[0] * m.shape[1]
    return cost


def storage_bytes(g: H2Matrix) -> int:
    total = g.row_basis.storage_bytes() + g.col_basis.storage_bytes()
    total += sum(m.nbytes for m in g.coupling.values())
    total += sum(m.nbytes for m in g.nearfield.values())
    return total


def _matrix_to_json(m: np.ndarray):
    return {"shape": list(m.shape), "data": m.ravel().tolist()}


def _matrix_from_json(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def _cluster_tree_to_json(t: ClusterTree):
    return {
        "points": t.points.tolist(),
        "perm": t.perm.tolist(),
        "start": t.start.tolist(),
        "stop": t.stop.tolist(),
        "children": [list(c) for c in t.children],
        "split_axis": list(t.split_axis),
        "bbox_min": t.bbox_min.tolist(),
        "bbox_max": t.bbox_max.tolist(),
    }


def _cluster_tree_from_json(d) -> ClusterTree:
    return ClusterTree(np.asarray(d["points"], dtype=np.float64),
                       np.asarray(d["perm"], dtype=np.int64),
                       np.asarray(d["start"], dtype=np.int64),
                       np.asarray(d["stop"], dtype=np.int64),
                       [tuple(c) for c in d["children"]],
                       list(d["split_axis"]),
                       np.asarray(d["bbox_min"], dtype=np.float64),
                       np.asarray(d["bbox_max"], dtype=np.float64))


def _basis_to_json(b: ClusterBasis):
    return {
        "rank": list(b.rank),
        "leaf_matrix": {str(t): _matrix_to_json(m) for t, m in b.leaf_matrix.items()},
        "transfer": {str(t): _matrix_to_json(m) for t, m in b.transfer.items()},
    }


def _basis_from_json(d, tree: ClusterTree) -> ClusterBasis:
    return ClusterBasis(tree, d["rank"],
                        {int(t): _matrix_from_json(m)
                         for t, m in d["leaf_matrix"].items()},
                        {int(t): _matrix_from_json(m)
                         for t, m in d["transfer"].items()})


def h2_to_json(g: H2Matrix) -> str:
    """JSON serialization (tree topology, ranks, matrices in row-major order).

    Intended for test fixtures; exact to IEEE-754 double round-trip through
    decimal text, not bit-exact across platforms.
    """
    bt = g.block_tree
    doc = {
        "rows": _cluster_tree_to_json(bt.rows),
        "cols": _cluster_tree_to_json(bt.cols),
        "block_row": list(map(int, bt.row)),
        "block_col": list(map(int, bt.col)),
        "block_children": [list(c) for c in bt.children],
        "block_admissible": [bool(a) for a in bt.admissible],
        "row_basis": _basis_to_json(g.row_basis),
        "col_basis": _basis_to_json(g.col_basis),
        "coupling": {str(b): _matrix_to_json(m) for b, m in g.coupling.items()},
        "nearfield": {str(b): _matrix_to_json(m) for b, m in g.nearfield.items()},
    }
    return json.dumps(doc)


def h2_from_json(text: str) -> H2Matrix:
    doc = json.loads(text)
    rows = _cluster_tree_from_json(doc["rows"])
    cols = _cluster_tree_from_json(doc["cols"])
    bt = BlockTree(rows, cols, doc["block_row"], doc["block_col"],
                   [tuple(c) for c in doc["block_children"]],
                   doc["block_admissible"])
    return H2Matrix(bt,
                    _basis_from_json(doc["row_basis"], rows),
                    _basis_from_json(doc["col_basis"], cols),
                    {int(b): _matrix_from_json(m)
                     for b, m in doc["coupling"].items()},
                    {int(b): _matrix_from_json(m)
                     for b, m in doc["nearfield"].items()})
