"""Phase 1: compressed induced bases and exact-structure product assembly.

The product of two H^2-matrices X (I x J) and Y (J x K) is representable
exactly over a refined block tree using induced row/column bases of
large rank.  This module compresses those bases adaptively bottom-up,
protecting the ranges of the factors' own bases exactly, and then
assembles the product as an H^2-matrix over the refined tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import full_householder_qr, spectral_norm, truncated_svd
from .errors import InvalidInputError, StructureError
from .h2 import BasisProduct, ClusterBasis, H2Matrix
from .trees import (KIND_A, KIND_B, KIND_C, BlockTree,
                    build_product_block_tree, classify_triple, _sub_middles,
                    same_cluster_tree)
from .weights import TotalWeights

__all__ = [
    "InducedBasisResult",
    "compress_induced_row_basis",
    "compress_induced_col_basis",
    "assemble_product",
    "multiply",
]


@dataclass
class InducedBasisResult:
    """Compressed induced basis over the row (or column) cluster tree.

    ``q`` is isometric per cluster.  ``basis_change[t]`` holds
    Q_t^T V_{X,t}; the range of V_{X,t} is reproduced exactly, i.e.
    expand(q, t) @ basis_change[t] == expand(V_X, t) up to roundoff.
    ``block_projections[(t, s)]`` holds Q_t^T X|ts V_{Y,s} for every
    block (t, s) of X's block tree that is not an admissible leaf.
    """

    q: ClusterBasis
    basis_change: dict[int, np.ndarray]
    block_projections: dict[tuple[int, int], np.ndarray]


def _inadmissible_columns(bx: BlockTree) -> dict[int, list[int]]:
    """Per row cluster t, the column clusters s of non-admissible blocks
    (t, s), in block-tree preorder."""
    out: dict[int, list[int]] = {t: [] for t in range(bx.rows.nnodes)}
    for b in range(bx.nblocks):
        if not bx.is_admissible_leaf(b):
            out[bx.row[b]].append(bx.col[b])
    return out


def _xv_at_leaf(x: H2Matrix, y: H2Matrix, pxy: BasisProduct,
                t: int, s: int) -> np.ndarray:
    """X|ts @ V_{Y,s} for a leaf cluster t, by block descent through X."""
    bx = x.block_tree
    b = bx.index[(t, s)]
    if bx.is_admissible_leaf(b):
        return x.row_basis.leaf_matrix[t] @ x.coupling[b] @ pxy.p[s]
    if bx.is_leaf(b):
        return x.nearfield[b] @ y.row_basis.leaf_matrix[s]
    acc = np.zeros((bx.rows.size(t), y.row_basis.rank[s]))
    for b2 in bx.children[b]:
        s2 = bx.col[b2]
        part = _xv_at_leaf(x, y, pxy, t, s2)
        acc += part @ y.row_basis.transfer[s2] if s2 != s else part
    return acc


def compress_induced_row_basis(x: H2Matrix, y: H2Matrix, zy: TotalWeights,
                               pxy: BasisProduct, tol: float, *,
                               max_rank: int | None = None,
                               scale_blocks: bool = True,
                               level_decay: float = 1.0) -> InducedBasisResult:
    """Adaptive isometric basis spanning the products X|ts Y|sr row-wise.

    Bottom-up over the row tree.  At a leaf t, the blocks
    X|ts V_{Y,s} Z_s^T for the non-admissible columns s of t are formed
    explicitly; a Householder factorization shields the columns of
    V_{X,t} from truncation and the remainder is cut at ``tol`` by a
    singular value decomposition.  Above leaves the same happens in the
    coordinates of the children's bases, so the result is nested by
    construction.  With ``scale_blocks`` each block is divided by (a
    lower bound of) its column-factor norm before truncation, yielding
    block-relative error control; at leaves the exact norm is used, above
    them the projected surrogate.

    The threshold is uniform across clusters by default; with
    ``level_decay`` < 1 it tightens geometrically with the cluster depth
    (tol * level_decay**depth).
    """
    bx = x.block_tree
    if not same_cluster_tree(bx.cols, y.block_tree.rows):
        raise InvalidInputError("x and y do not share the middle cluster tree")
    t_rows = bx.rows
    vx, vy = x.row_basis, y.row_basis
    cols_of = _inadmissible_columns(bx)
    depth = [0] * t_rows.nnodes
    for t in range(t_rows.nnodes):
        for c in t_rows.children[t]:
            depth[c] = depth[t] + 1

    rank = [0] * t_rows.nnodes
    leaf_q: dict[int, np.ndarray] = {}
    transfer_q: dict[int, np.ndarray] = {}
    basis_change: dict[int, np.ndarray] = {}
    projections: dict[tuple[int, int], np.ndarray] = {}

    def compress_at(t, vx_t, blocks, middles, leaf):
        # vx_t: the (projected) V_{X,t}; blocks[i]: (projected) X|ts_i V_{Y,s_i}
        m = vx_t.shape[0]
        weighted = []
        for s, blk in zip(middles, blocks):
            w = blk @ zy.z[s].T
            if scale_blocks:
                nrm = spectral_norm(blk)
                if nrm == 0.0:
                    continue
                w = w / nrm
            weighted.append(w)
        stacked = np.hstack(weighted) if weighted else np.zeros((m, 0))
        q_full, r_fac = full_householder_qr(vx_t)
        k1 = min(vx_t.shape)
        remainder = q_full[:, k1:].T @ stacked
        cap = None if max_rank is None else max(0, max_rank - k1)
        svd = truncated_svd(remainder, tol * level_decay ** depth[t],
                            max_rank=cap)
        q_t = np.hstack([q_full[:, :k1], q_full[:, k1:] @ svd.u])
        rank[t] = k1 + svd.retained_rank
        basis_change[t] = np.vstack([r_fac[:k1],
                                     np.zeros((svd.retained_rank, vx_t.shape[1]))])
        for s, blk in zip(middles, blocks):
            projections[(t, s)] = q_t.T @ blk
        if leaf:
            leaf_q[t] = q_t
        else:
            offset = 0
            for c in t_rows.children[t]:
                transfer_q[c] = q_t[offset:offset + rank[c]]
                offset += rank[c]

    def projected_block(t2, s2):
        # Q_{t2}^T X|t2,s2 V_{Y,s2}, reusing the recursion's products
        b2 = bx.index[(t2, s2)]
        if bx.is_admissible_leaf(b2):
            return basis_change[t2] @ x.coupling[b2] @ pxy.p[s2]
        return projections[(t2, s2)]

    def ahat(t, s):
        # U_t^T X|ts V_{Y,s} assembled from the children's projections
        b = bx.index[(t, s)]
        total_rows = sum(rank[c] for c in t_rows.children[t])
        acc = np.zeros((total_rows, vy.rank[s]))
        by_col: dict[int, list[np.ndarray]] = {}
        for b2 in bx.children[b]:
            by_col.setdefault(bx.col[b2], []).append(
                projected_block(bx.row[b2], bx.col[b2]))
        for s2, parts in by_col.items():
            block = np.vstack(parts)
            acc += block @ vy.transfer[s2] if s2 != s else block
        return acc

    def rec(t):
        middles = cols_of[t]
        if t_rows.is_leaf(t):
            blocks = [_xv_at_leaf(x, y, pxy, t, s) for s in middles]
            compress_at(t, vx.leaf_matrix[t], blocks, middles, leaf=True)
        else:
            for c in t_rows.children[t]:
                rec(c)
            vhat = np.vstack([basis_change[c] @ vx.transfer[c]
                              for c in t_rows.children[t]])
            blocks = [ahat(t, s) for s in middles]
            compress_at(t, vhat, blocks, middles, leaf=False)

    rec(t_rows.root)
    q = ClusterBasis(t_rows, rank, leaf_q, transfer_q)
    return InducedBasisResult(q, basis_change, projections)


def compress_induced_col_basis(x: H2Matrix, y: H2Matrix,
                               zx_adjoint: TotalWeights, pxy: BasisProduct,
                               tol: float, **kwargs) -> InducedBasisResult:
    """Induced column basis: the row algorithm applied to Y^T X^T.

    ``zx_adjoint`` are the total weights of X^T, i.e. built from the
    basis weights of V_X and the transposed couplings of X.  The result
    is keyed by clusters of the column tree of Y; ``basis_change[r]``
    protects W_{Y,r} and ``block_projections[(r, s)]`` holds
    Q_r^T Y|sr^T W_{X,s}.
    """
    return compress_induced_row_basis(y.transposed(), x.transposed(),
                                      zx_adjoint, pxy.transposed(), tol,
                                      **kwargs)


def _wy_at_leaf(x: H2Matrix, y: H2Matrix, pxy: BasisProduct,
                s: int, r: int) -> np.ndarray:
    """Y|sr^T @ W_{X,s} for a leaf cluster r, by block descent through Y."""
    by = y.block_tree
    b = by.index[(s, r)]
    if by.is_admissible_leaf(b):
        return y.col_basis.leaf_matrix[r] @ y.coupling[b].T @ pxy.p[s].T
    if by.is_leaf(b):
        return y.nearfield[b].T @ x.col_basis.leaf_matrix[s]
    acc = np.zeros((by.cols.size(r), x.col_basis.rank[s]))
    for b2 in by.children[b]:
        s2 = by.row[b2]
        part = _wy_at_leaf(x, y, pxy, s2, r)
        acc += part @ x.col_basis.transfer[s2] if s2 != s else part
    return acc


def assemble_product(x: H2Matrix, y: H2Matrix, qrow: InducedBasisResult,
                     qcol: InducedBasisResult, pxy: BasisProduct,
                     product_tree: BlockTree | None = None) -> H2Matrix:
    """H^2-matrix X @ Y over the product block tree in the induced bases.

    Triples (t, s, r) descend from the roots; a middle s terminates as
    soon as (s, r) or (t, s) is admissible (coupling contribution at the
    current product block, the doubly admissible case is consumed by the
    first branch) or both factors are dense (nearfield contribution).
    Couplings that accumulate on subdivided product blocks are pushed
    down through the transfer matrices afterwards, which is exact.
    Contributions to dense product blocks are evaluated exactly, without
    projecting onto the compressed bases.
    """
    bx, by = x.block_tree, y.block_tree
    if not same_cluster_tree(bx.cols, by.rows):
        raise InvalidInputError("x and y do not share the middle cluster tree")
    pt = product_tree if product_tree is not None \
        else build_product_block_tree(bx, by)
    t_rows, t_mid, t_cols = bx.rows, bx.cols, by.cols
    vx, wy = x.row_basis, y.col_basis
    q_r, q_c = qrow.q, qcol.q

    coupling: dict[int, np.ndarray] = {}
    nearfield: dict[int, np.ndarray] = {}
    xv_memo: dict[tuple[int, int], np.ndarray] = {}
    wy_memo: dict[tuple[int, int], np.ndarray] = {}

    def xv(t, s):
        key = (t, s)
        if key not in xv_memo:
            xv_memo[key] = _xv_at_leaf(x, y, pxy, t, s)
        return xv_memo[key]

    def wyl(s, r):
        key = (s, r)
        if key not in wy_memo:
            wy_memo[key] = _wy_at_leaf(x, y, pxy, s, r)
        return wy_memo[key]

    def row_factor(t, s):
        # Q_t^T X|ts V_{Y,s}
        b = bx.index[(t, s)]
        if bx.is_admissible_leaf(b):
            return qrow.basis_change[t] @ x.coupling[b] @ pxy.p[s]
        return qrow.block_projections[(t, s)]

    def col_factor(r, s):
        # Q_r^T Y|sr^T W_{X,s}
        b = by.index[(s, r)]
        if by.is_admissible_leaf(b):
            return qcol.basis_change[r] @ y.coupling[b].T @ pxy.p[s].T
        return qcol.block_projections[(r, s)]

    def add(store, key, value):
        if key in store:
            store[key] = store[key] + value
        else:
            store[key] = value

    def rec(node, middles):
        t, r = pt.row[node], pt.col[node]
        is_leaf = pt.is_leaf(node)
        dense_target = is_leaf and not pt.admissible[node]
        nonterminal: list[int] = []
        stack = list(middles)
        while stack:
            s = stack.pop()
            kind = classify_triple(bx, by, t, s, r)
            if kind == KIND_A:
                s_y = y.coupling[by.index[(s, r)]]
                if dense_target:
                    add(nearfield, node,
                        xv(t, s) @ s_y @ wy.leaf_matrix[r].T)
                else:
                    add(coupling, node,
                        row_factor(t, s) @ s_y @ qcol.basis_change[r].T)
            elif kind == KIND_B:
                s_x = x.coupling[bx.index[(t, s)]]
                if dense_target:
                    add(nearfield, node,
                        vx.leaf_matrix[t] @ s_x @ wyl(s, r).T)
                else:
                    add(coupling, node,
                        qrow.basis_change[t] @ s_x @ col_factor(r, s).T)
            elif kind == KIND_C:
                add(nearfield, node,
                    x.nearfield[bx.index[(t, s)]] @ y.nearfield[by.index[(s, r)]])
            else:
                if is_leaf:
                    # both clusters are leaves: chase the middle only
                    stack.extend(t_mid.children[s])
                else:
                    nonterminal.append(s)
        if nonterminal:
            if is_leaf:
                raise StructureError("unresolved middles at a product leaf")
            subs = []
            for s in nonterminal:
                subs.extend(_sub_middles(bx, by, t_mid, t, s, r))
            for child in pt.children[node]:
                rec(child, subs)
        elif not is_leaf:
            for child in pt.children[node]:
                rec(child, [])

    rec(pt.root, [t_mid.root])

    # push couplings accumulated on subdivided blocks down to the leaves
    for node in range(pt.nblocks):
        if pt.is_leaf(node) or node not in coupling:
            continue
        s_tr = coupling.pop(node)
        t, r = pt.row[node], pt.col[node]
        for child in pt.children[node]:
            t2, r2 = pt.row[child], pt.col[child]
            left = q_r.transfer[t2] if t2 != t else None
            right = q_c.transfer[r2] if r2 != r else None
            part = left @ s_tr if left is not None else s_tr
            part = part @ right.T if right is not None else part
            if pt.is_inadmissible_leaf(child):
                add(nearfield, child,
                    q_r.leaf_matrix[t2] @ part @ q_c.leaf_matrix[r2].T)
            else:
                add(coupling, child, part)

    for node in pt.admissible_leaves():
        if node not in coupling:
            coupling[node] = np.zeros((q_r.rank[pt.row[node]],
                                       q_c.rank[pt.col[node]]))
    for node in pt.inadmissible_leaves():
        if node not in nearfield:
            nearfield[node] = np.zeros((t_rows.size(pt.row[node]),
                                        t_cols.size(pt.col[node])))

    return H2Matrix(pt, q_r, q_c, coupling, nearfield)


def multiply(x: H2Matrix, y: H2Matrix, tol: float, *,
             max_rank: int | None = None, scaling: bool = True) -> H2Matrix:
    """Convenience driver for phase 1: weights, bases, assembly."""
    from .h2 import cluster_basis_product
    from .weights import basis_weights, total_weights

    pxy = cluster_basis_product(x.col_basis, y.row_basis)
    zy = total_weights(y, basis_weights(y.col_basis), scaling=scaling)
    zxt = total_weights(x.transposed(), basis_weights(x.row_basis),
                        scaling=scaling)
    qrow = compress_induced_row_basis(x, y, zy, pxy, tol, max_rank=max_rank,
                                      scale_blocks=scaling)
    qcol = compress_induced_col_basis(x, y, zxt, pxy, tol, max_rank=max_rank,
                                      scale_blocks=scaling)
    return assemble_product(x, y, qrow, qcol, pxy)
