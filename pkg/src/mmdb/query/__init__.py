"""Hybrid query layer: query model, planning, and execution."""

from mmdb.query.executor import QueryResult, ResultRow, choose_and_execute, execute_all_plans, explain, naive_execute
from mmdb.query.nra import NraResult, NraState, nra_topk, update_bounds
from mmdb.query.plan import cost_plan, enumerate_plans, estimate_selectivity
from mmdb.query.spec import (Keyword, Mode, Predicate, QueryOptions, QuerySpec, RankSpec, RankTerm, ScalarRange,
                             SpatialContains, VectorThreshold)

__all__ = [
    "Keyword", "Mode", "NraResult", "NraState", "Predicate", "QueryOptions", "QueryResult", "QuerySpec",
    "RankSpec", "RankTerm", "ResultRow", "ScalarRange", "SpatialContains", "VectorThreshold",
    "choose_and_execute", "cost_plan", "enumerate_plans", "estimate_selectivity", "execute_all_plans",
    "explain", "naive_execute", "nra_topk", "update_bounds",
]
