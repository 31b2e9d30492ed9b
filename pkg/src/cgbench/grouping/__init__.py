"""The nine correspondence grouping methods behind one calling convention."""
from __future__ import annotations

import time

from ..features import CorrespondenceSet
from .common import (
    ADAPTIVE,
    METHODS,
    GrouperParams,
    GroupingContext,
    GroupingResult,
    otsu_threshold,
    rigidity_diff,
    rigidity_diff_matrix,
    rigidity_ratio,
    rigidity_ratio_matrix,
)
from .group import (
    group_3dhv,
    group_gc,
    group_gtm,
    group_ransac,
    group_st,
    hough_votes,
    principal_eigenvector,
    replicator_dynamics,
)
from .individual import cv_scores, group_cv, group_nnsr, group_si, group_ss, si_scores

GROUPERS = {
    "ss": group_ss,
    "nnsr": group_nnsr,
    "st": group_st,
    "ransac": group_ransac,
    "gc": group_gc,
    "3dhv": group_3dhv,
    "gtm": group_gtm,
    "si": group_si,
    "cv": group_cv,
}

INDIVIDUAL = ("ss", "nnsr", "si", "cv")
GROUP_BASED = ("ransac", "st", "gc", "3dhv", "gtm")


def run_method(method: str, cset: CorrespondenceSet, params: GrouperParams | None = None,
               ctx: GroupingContext | None = None) -> GroupingResult:
    """Run one grouper by name and record its wall-clock time."""
    try:
        fn = GROUPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}") from None
    params = params or GrouperParams()
    ctx = ctx or GroupingContext.for_set(cset)
    t0 = time.perf_counter()
    result = fn(cset, params, ctx)
    result.elapsed = time.perf_counter() - t0
    return result


__all__ = [
    "ADAPTIVE", "METHODS", "GROUPERS", "INDIVIDUAL", "GROUP_BASED",
    "GrouperParams", "GroupingContext", "GroupingResult", "run_method",
    "otsu_threshold", "rigidity_ratio", "rigidity_diff", "rigidity_ratio_matrix",
    "rigidity_diff_matrix", "principal_eigenvector", "replicator_dynamics", "hough_votes",
    "si_scores", "cv_scores",
    "group_ss", "group_nnsr", "group_st", "group_ransac", "group_gc", "group_3dhv",
    "group_gtm", "group_si", "group_cv",
]
