"""Individual-based groupers: every correspondence is scored on its own."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..features import CorrespondenceSet
from ..geometry import pairwise_lrf_angles
from .common import (
    GrouperParams,
    GroupingContext,
    GroupingResult,
    _ratio,
    require_lrfs,
    rigidity_diff_matrix,
    select_above,
)


def _top_by_ratio(cset: CorrespondenceSet, k: int) -> np.ndarray:
    # stable descending order: equal ratio scores keep the lower index first
    order = np.argsort(-cset.ratio, kind="stable")
    return order[:k]


def group_ss(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    if len(cset) < 2:
        raise ValueError("ss needs at least 2 correspondences")
    scores = cset.sim.copy()
    return GroupingResult("ss", select_above(scores, params.t_ss), scores)


def group_nnsr(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    scores = cset.ratio.copy()
    return GroupingResult("nnsr", np.flatnonzero(scores >= params.t_nnsr), scores)


def si_scores(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> np.ndarray:
    """Local + global vote fraction per correspondence.

    Local voters of c: its kappa nearest correspondences (source-keypoint
    distance, c excluded) that pass the ratio-test prefilter. Global voters:
    the kappa best ratio scores other than c. A global voter also has to land
    within delta of its target under the LRF-to-LRF transform of c.
    """
    require_lrfs(cset)
    n = len(cset)
    kappa = params.kappa
    varsigma = params.varsigma
    delta = params.delta * ctx.pr
    in_ratio = cset.ratio >= params.si_ratio_init
    if not in_ratio.any():
        return np.zeros(n)

    # local voting
    k_loc = min(kappa, n - 1)
    if k_loc > 0:
        _, nbr = cKDTree(cset.src).query(cset.src, k=k_loc + 1)
        nbr = np.reshape(nbr, (n, k_loc + 1))
        rows = np.arange(n)[:, None]
        # drop c itself; with duplicate keypoints it need not come first
        not_self = nbr != rows
        first_k = np.cumsum(not_self, axis=1) <= k_loc
        nbr_mask = not_self & first_k
        local_mask = nbr_mask & in_ratio[nbr]
        d = np.linalg.norm(cset.src[nbr] - cset.src[:, None, :], axis=2)
        dp = np.linalg.norm(cset.dst[nbr] - cset.dst[:, None, :], axis=2)
        local_votes = (local_mask & (_ratio(d, dp) > varsigma)).sum(axis=1)
        local_size = local_mask.sum(axis=1)
    else:
        local_votes = local_size = np.zeros(n, dtype=int)

    # global voting over the kappa + 1 best candidates, excluding c itself
    cand = _top_by_ratio(cset, kappa + 1)
    glob_mask = np.ones((n, len(cand)), dtype=bool)
    glob_mask &= cand[None, :] != np.arange(n)[:, None]
    if len(cand) > kappa:
        # c outside the top kappa never sees the extra candidate
        outside = ~np.isin(np.arange(n), cand[:kappa])
        glob_mask[outside, kappa] = False
    d = np.linalg.norm(cset.src[cand][None, :, :] - cset.src[:, None, :], axis=2)
    dp = np.linalg.norm(cset.dst[cand][None, :, :] - cset.dst[:, None, :], axis=2)
    rigid_ok = _ratio(d, dp) > varsigma
    # T(c): rotation L'^T L, translation p' - L'^T L p
    rot = np.einsum("nki,nkj->nij", cset.dst_lrf, cset.src_lrf)
    trans = cset.dst - np.einsum("nij,nj->ni", rot, cset.src)
    mapped = np.einsum("nij,mj->nmi", rot, cset.src[cand]) + trans[:, None, :]
    v_g = np.linalg.norm(mapped - cset.dst[cand][None, :, :], axis=2)
    glob_votes = (glob_mask & rigid_ok & (v_g < delta)).sum(axis=1)
    glob_size = glob_mask.sum(axis=1)

    denom = local_size + glob_size
    return np.divide(local_votes + glob_votes, denom, out=np.zeros(n), where=denom > 0)


def group_si(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    if len(cset) < 2:
        raise ValueError("si needs at least 2 correspondences")
    scores = si_scores(cset, params, ctx)
    return GroupingResult("si", select_above(scores), scores)


def cv_scores(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> np.ndarray:
    """Sum of rigidity / LRF-affinity compatibilities with the top-k voters."""
    require_lrfs(cset)
    n = len(cset)
    voters = _top_by_ratio(cset, params.k_cv)
    delta_r = params.delta_r * ctx.pr
    r = rigidity_diff_matrix(cset, cols=voters)
    ang_s = pairwise_lrf_angles(cset.src_lrf, cset.src_lrf[voters])
    ang_t = pairwise_lrf_angles(cset.dst_lrf, cset.dst_lrf[voters])
    L = np.abs(ang_s - ang_t)
    D = np.exp(-(r / delta_r) ** 2 - (L / params.delta_L) ** 2)
    D[voters, np.arange(len(voters))] = 0.0
    return D.sum(axis=1) if n else np.zeros(0)


def group_cv(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    if len(cset) < 2:
        raise ValueError("cv needs at least 2 correspondences")
    scores = cv_scores(cset, params, ctx)
    return GroupingResult("cv", select_above(scores, params.t_cv), scores)
