"""Phase 2: re-compression of the refined product onto a coarser block tree.

The product from phase 1 lives on the refined tree with isometric bases.
Admissible parts condense into per-cluster weights Z_t; blocks that the
refined tree subdivides but the target tree keeps admissible are carried
as column-tree representations, merged across levels by matching their
column trees through the transfer matrices.  New adaptive bases are cut
by singular value decompositions of the condensed matrices, and the
final matrix is projected onto them block by block.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .dense import qr_r, spectral_norm, spectral_norms, truncated_svd
from .errors import InvalidInputError, StructureError
from .h2 import ClusterBasis, H2Matrix
from .trees import BlockTree, ColumnTree, same_cluster_tree

__all__ = [
    "CoarsenState",
    "coarsen_total_weights",
    "match_column",
    "union_column_tree",
    "build_coarse_row_basis",
    "build_coarse_col_basis",
    "project_final",
    "coarsen",
]


@dataclass
class CoarsenState:
    """Result of one adaptive coarse-basis construction.

    ``q`` is the new isometric nested basis, ``r[t] = Q_t^T V_t`` the
    change from the old basis, ``z[t]`` the condensation weight, and
    ``reps[b]`` a column tree with attached representation matrices
    Q_t^T G|tr for every subdivided-or-nearfield product block (t, r)
    below an admissible block of the target tree.
    """

    q: ClusterBasis
    r: dict[int, np.ndarray]
    z: dict[int, np.ndarray]
    reps: dict[int, ColumnTree]


def _row_admissible(g: H2Matrix) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {t: [] for t in range(g.block_tree.rows.nnodes)}
    for b in g.block_tree.admissible_leaves():
        out[g.block_tree.row[b]].append(b)
    return out


def coarsen_total_weights(g: H2Matrix, t: int, z_parent,
                          scaling: bool = False) -> np.ndarray:
    """Weight Z_t condensing the admissible product blocks at t and above.

    Stacks the parent weight pushed through the transfer matrix on top
    of S_tr^T per admissible leaf (t, r) of g's block tree; since g's
    column basis is isometric no basis-weight factors are needed.  With
    ``scaling`` each coupling row block is divided by its spectral norm
    (the exact norm of the block, the bases being isometric).
    """
    bt = g.block_tree
    parts = []
    if z_parent is not None and z_parent.shape[0] > 0:
        parts.append(z_parent @ g.row_basis.transfer[t].T)
    for b in bt.admissible_leaves():
        if bt.row[b] != t:
            continue
        block = g.coupling[b].T
        if scaling:
            nrm = spectral_norm(block)
            if nrm == 0.0:
                continue
            block = block / nrm
        parts.append(block)
    if not parts:
        return np.zeros((0, g.row_basis.rank[t]))
    return qr_r(np.vstack(parts))


def union_column_tree(a: ColumnTree | None, b: ColumnTree | None) -> ColumnTree:
    """Structure-only union of two column trees over the same root."""
    if a is None:
        return b.structure()
    if b is None:
        return a.structure()
    if a.cluster != b.cluster:
        raise StructureError("column trees rooted at different clusters")
    if a.children and b.children:
        kids = [union_column_tree(ca, cb)
                for ca, cb in zip(a.children, b.children)]
        return ColumnTree(a.cluster, kids)
    if a.children:
        return a.structure()
    if b.children:
        return b.structure()
    return ColumnTree(a.cluster, admissible=a.admissible and b.admissible)


def match_column(ct: ColumnTree, target: ColumnTree,
                 w: ClusterBasis) -> ColumnTree:
    """Refine a column representation to cover the target structure.

    Where the target subdivides a leaf, children are created through the
    transfer matrices of ``w`` (A_r -> A_r F_r'^T); where the target
    marks an admissible leaf inadmissible, the representation switches
    to explicit columns (A_r -> A_r W_r^T).  The represented matrix is
    unchanged.
    """
    if ct.cluster != target.cluster:
        raise InvalidInputError("representation and target roots differ")
    if ct.children:
        if target.is_leaf():
            return ct
        kids = [match_column(c, tc, w)
                for c, tc in zip(ct.children, target.children)]
        return ColumnTree(ct.cluster, kids, ct.admissible, ct.matrix)
    if target.children:
        kids = []
        for tc in target.children:
            child = ColumnTree(tc.cluster, (), True,
                               ct.matrix @ w.transfer[tc.cluster].T)
            kids.append(match_column(child, tc, w))
        return ColumnTree(ct.cluster, kids, True)
    if ct.admissible and not target.admissible:
        return ColumnTree(ct.cluster, (), False,
                          ct.matrix @ w.leaf_matrix[ct.cluster].T)
    return ct


def _stack_reps(reps: list[ColumnTree]) -> ColumnTree:
    first = reps[0]
    if first.children:
        kids = [_stack_reps([r.children[i] for r in reps])
                for i in range(len(first.children))]
        return ColumnTree(first.cluster, kids, first.admissible)
    return ColumnTree(first.cluster, (), first.admissible,
                      np.vstack([r.matrix for r in reps]))


def _map_rep(ct: ColumnTree, fn) -> ColumnTree:
    if ct.is_leaf():
        return ColumnTree(ct.cluster, (), ct.admissible, fn(ct.matrix))
    return ColumnTree(ct.cluster, [_map_rep(c, fn) for c in ct.children],
                      ct.admissible)


def _flatten_rep(ct: ColumnTree) -> np.ndarray:
    return np.hstack([leaf.matrix for leaf in ct.leaves()])


def _validate_coarse(pt: BlockTree, coarse: BlockTree):
    if not (same_cluster_tree(pt.rows, coarse.rows)
            and same_cluster_tree(pt.cols, coarse.cols)):
        raise InvalidInputError("coarse tree lives on different cluster trees")
    for b in range(coarse.nblocks):
        if (coarse.row[b], coarse.col[b]) not in pt.index:
            raise InvalidInputError(
                f"coarse block ({coarse.row[b]}, {coarse.col[b]}) is finer "
                "than the product block tree")


def _coverage(pt: BlockTree, coarse: BlockTree) -> list[bool]:
    """Per product block: does an admissible coarse block contain it?"""
    cov = [False] * pt.nblocks

    def walk(pb, cb, state):
        if state is None and cb is not None and coarse.is_leaf(cb):
            state = coarse.admissible[cb]
        cov[pb] = state is True
        for child in pt.children[pb]:
            key = (pt.row[child], pt.col[child])
            walk(child, coarse.index.get(key) if state is None else None, state)

    walk(pt.root, coarse.root, None)
    return cov


def build_coarse_row_basis(g: H2Matrix, coarse: BlockTree, tol: float, *,
                           max_rank: int | None = None,
                           scale_blocks: bool = True,
                           coupling_norms: dict[int, float] | None = None,
                           nearfield_norms: dict[int, float] | None = None) -> CoarsenState:
    """Adaptive row basis for re-compressing g onto the coarse block tree.

    Follows the condensation recursion: weights Z_t flow top-down, the
    basis is cut bottom-up from the condensed matrices [V_t Z_t^T | ...]
    whose remaining columns are the nearfield and subdivided blocks lying
    inside admissible coarse blocks.  Representations of subdivided
    blocks are merged from the children by matching column trees.
    """
    pt = g.block_tree
    _validate_coarse(pt, coarse)
    cov = _coverage(pt, coarse)
    tree = pt.rows
    v1, w1 = g.row_basis, g.col_basis

    row_adm: dict[int, list[int]] = {t: [] for t in range(tree.nnodes)}
    near_cov: dict[int, list[int]] = {t: [] for t in range(tree.nnodes)}
    sub_cov: dict[int, list[int]] = {t: [] for t in range(tree.nnodes)}
    for b in range(pt.nblocks):
        t = pt.row[b]
        if pt.is_admissible_leaf(b):
            row_adm[t].append(b)
        elif pt.is_inadmissible_leaf(b):
            if cov[b]:
                near_cov[t].append(b)
        elif cov[b]:
            sub_cov[t].append(b)

    rank = [0] * tree.nnodes
    leaf_q: dict[int, np.ndarray] = {}
    transfer_q: dict[int, np.ndarray] = {}
    rmap: dict[int, np.ndarray] = {}
    zmap: dict[int, np.ndarray] = {}
    reps: dict[int, ColumnTree] = {}

    if scale_blocks and coupling_norms is None:
        coupling_norms = _coupling_norms(g)
    if scale_blocks and nearfield_norms is None:
        nearfield_norms = _nearfield_norms(g)

    def z_step(t, z_parent):
        parts = []
        if z_parent is not None and z_parent.shape[0] > 0:
            parts.append(z_parent @ v1.transfer[t].T)
        for b in row_adm[t]:
            block = g.coupling[b].T
            if scale_blocks:
                nrm = coupling_norms[b]
                if nrm == 0.0:
                    continue
                block = block / nrm
            parts.append(block)
        if not parts:
            return np.zeros((0, v1.rank[t]))
        return qr_r(np.vstack(parts))

    def scaled(m, nrm=None):
        if not scale_blocks:
            return m
        if nrm is None:
            nrm = spectral_norm(m)
        return m / nrm if nrm > 0.0 else m

    def child_rep(b):
        t2 = pt.row[b]
        if pt.is_admissible_leaf(b):
            return ColumnTree(pt.col[b], (), True, rmap[t2] @ g.coupling[b])
        return reps[b]

    def merged_rep(b, t):
        # children of (t, r) are chil(t) x (chil(r) or {r}) here
        groups: dict[int, list[ColumnTree]] = {}
        order: list[int] = []
        for b2 in pt.children[b]:
            r2 = pt.col[b2]
            if r2 not in groups:
                groups[r2] = []
                order.append(r2)
            groups[r2].append(child_rep(b2))
        merged = {}
        for r2 in order:
            parts = groups[r2]
            target = reduce(union_column_tree, parts, None)
            merged[r2] = _stack_reps([match_column(p, target, w1)
                                      for p in parts])
        r = pt.col[b]
        if order == [r]:
            return merged[r]
        return ColumnTree(r, [merged[r2] for r2 in order], True)

    def compose_leaf_rep(b, t):
        # subdivided block at a leaf row cluster: children keep t fixed
        if pt.is_admissible_leaf(b):
            return ColumnTree(pt.col[b], (), True, rmap[t] @ g.coupling[b])
        if pt.is_inadmissible_leaf(b):
            return reps[b]
        kids = [compose_leaf_rep(b2, t) for b2 in pt.children[b]]
        rep = ColumnTree(pt.col[b], kids, True)
        reps[b] = rep
        return rep

    def rec(t, z_parent):
        zmap[t] = z_step(t, z_parent)
        if tree.is_leaf(t):
            v_leaf = v1.leaf_matrix[t]
            columns = [v_leaf @ zmap[t].T]
            columns += [scaled(g.nearfield[b], nearfield_norms[b]
                               if scale_blocks else None)
                        for b in near_cov[t]]
            stacked = np.hstack(columns)
            svd = truncated_svd(stacked, tol, max_rank=max_rank)
            q_t = svd.u
            rank[t] = svd.retained_rank
            leaf_q[t] = q_t
            rmap[t] = q_t.T @ v_leaf
            for b in near_cov[t]:
                reps[b] = ColumnTree(pt.col[b], (), False, q_t.T @ g.nearfield[b])
            for b in sub_cov[t]:
                compose_leaf_rep(b, t)
        else:
            for c in tree.children[t]:
                rec(c, zmap[t])
            vhat = np.vstack([rmap[c] @ v1.transfer[c]
                              for c in tree.children[t]])
            merged = [merged_rep(b, t) for b in sub_cov[t]]
            columns = [vhat @ zmap[t].T]
            columns += [scaled(_flatten_rep(rep)) for rep in merged]
            stacked = np.hstack(columns)
            svd = truncated_svd(stacked, tol, max_rank=max_rank)
            q_hat = svd.u
            rank[t] = svd.retained_rank
            offset = 0
            for c in tree.children[t]:
                transfer_q[c] = q_hat[offset:offset + rank[c]]
                offset += rank[c]
            rmap[t] = q_hat.T @ vhat
            for b, rep in zip(sub_cov[t], merged):
                reps[b] = _map_rep(rep, lambda m: q_hat.T @ m)

    rec(tree.root, None)
    q = ClusterBasis(tree, rank, leaf_q, transfer_q)
    return CoarsenState(q, rmap, zmap, reps)


def build_coarse_col_basis(g: H2Matrix, coarse: BlockTree, tol: float,
                           **kwargs) -> CoarsenState:
    """Adaptive column basis: the row construction applied to G^T."""
    return build_coarse_row_basis(g.transposed(), coarse.transposed(), tol,
                                  **kwargs)


def _coupling_norms(g: H2Matrix) -> dict[int, float]:
    keys = list(g.coupling)
    vals = spectral_norms([g.coupling[b] for b in keys])
    return dict(zip(keys, vals))


def _nearfield_norms(g: H2Matrix) -> dict[int, float]:
    keys = list(g.nearfield)
    vals = spectral_norms([g.nearfield[b] for b in keys])
    return dict(zip(keys, vals))


def project_final(g: H2Matrix, rowstate: CoarsenState,
                  colstate: CoarsenState, coarse: BlockTree) -> H2Matrix:
    """Project the phase-1 product onto the coarse tree and the new bases.

    Couplings of admissible coarse leaves are assembled from the stored
    representation matrices and basis changes through the transfer
    chains, never touching O(n)-sized data per block; inadmissible
    coarse leaves are copied (or materialized) densely from the refined
    matrix.
    """
    pt = g.block_tree
    _validate_coarse(pt, coarse)
    qrow, qcol = rowstate.q, colstate.q

    def row_rep(b):
        if pt.is_admissible_leaf(b):
            return ColumnTree(pt.col[b], (), True,
                              rowstate.r[pt.row[b]] @ g.coupling[b])
        return rowstate.reps[b]

    def lift(node, chain, out):
        if node.is_leaf():
            if node.admissible:
                out += node.matrix @ colstate.r[node.cluster].T @ chain
            else:
                out += node.matrix @ qcol.leaf_matrix[node.cluster] @ chain
            return
        for c in node.children:
            lift(c, qcol.transfer[c.cluster] @ chain, out)

    coupling: dict[int, np.ndarray] = {}
    nearfield: dict[int, np.ndarray] = {}
    rows, cols = coarse.rows, coarse.cols
    for b in range(coarse.nblocks):
        if not coarse.is_leaf(b):
            continue
        t, r = coarse.row[b], coarse.col[b]
        pb = pt.index[(t, r)]
        if coarse.admissible[b]:
            s_tr = np.zeros((qrow.rank[t], qcol.rank[r]))
            lift(row_rep(pb), np.eye(qcol.rank[r]), s_tr)
            coupling[b] = s_tr
        else:
            if pt.is_inadmissible_leaf(pb):
                nearfield[b] = g.nearfield[pb].copy()
            elif pt.is_admissible_leaf(pb):
                nearfield[b] = (g.row_basis.leaf_matrix[t] @ g.coupling[pb]
                                @ g.col_basis.leaf_matrix[r].T)
            else:
                raise StructureError("inadmissible coarse leaf is subdivided "
                                     "in the product tree")
    return H2Matrix(coarse, qrow, qcol, coupling, nearfield)


def coarsen(g: H2Matrix, coarse: BlockTree, tol: float, *,
            max_rank: int | None = None,
            scale_blocks: bool = True) -> H2Matrix:
    """Convenience driver for phase 2: both bases plus final projection."""
    norms = _coupling_norms(g) if scale_blocks else None
    nnorms = _nearfield_norms(g) if scale_blocks else None
    rowstate = build_coarse_row_basis(g, coarse, tol, max_rank=max_rank,
                                      scale_blocks=scale_blocks,
                                      coupling_norms=norms,
                                      nearfield_norms=nnorms)
    colstate = build_coarse_col_basis(g, coarse, tol, max_rank=max_rank,
                                      scale_blocks=scale_blocks,
                                      coupling_norms=norms,
                                      nearfield_norms=nnorms)
    return project_final(g, rowstate, colstate, coarse)


def orthogonalized(g: H2Matrix) -> H2Matrix:
    """Equivalent H^2-matrix with isometric row and column bases."""
    from .h2 import orthogonalize_basis

    qrow, rrow = orthogonalize_basis(g.row_basis)
    qcol, rcol = orthogonalize_basis(g.col_basis)
    bt = g.block_tree
    coupling = {b: rrow[bt.row[b]] @ s @ rcol[bt.col[b]].T
                for b, s in g.coupling.items()}
    return H2Matrix(bt, qrow, qcol, coupling, g.nearfield)


def recompress(g: H2Matrix, tol: float, *,
               max_rank: int | None = None) -> H2Matrix:
    """Adaptive-rank recompression of an H^2-matrix on its own block tree.

    Orthogonalizes the bases, then runs the coarsening machinery with the
    matrix's own block tree as the target.  This is how raw interpolation
    inputs are brought to adaptive ranks before multiplication.
    """
    return coarsen(orthogonalized(g), g.block_tree, tol, max_rank=max_rank)
