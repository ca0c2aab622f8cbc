"""Continuous queries and incrementally maintained materialized views."""

from mmdb.views.catalog import FRESH, STALE_REFILL, MaterializedView, ViewCatalog
from mmdb.views.clustering import cluster_regions, cluster_vectors
from mmdb.views.engine import ContinuousQuery, ViewEngine
from mmdb.views.knapsack import select_views

__all__ = ["FRESH", "STALE_REFILL", "ContinuousQuery", "MaterializedView", "ViewCatalog", "ViewEngine",
           "cluster_regions", "cluster_vectors", "select_views"]
