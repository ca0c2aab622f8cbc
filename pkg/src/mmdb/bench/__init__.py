"""Synthetic multimodal workloads and benchmark reporting."""

from mmdb.bench.dataset import DatasetContext, WorkloadConfig, generate_dataset
from mmdb.bench.templates import TEMPLATES, QueryTemplate
from mmdb.bench.workload import MetricsReport, compare_plans_report, operation_sequence, run_workload

__all__ = ["DatasetContext", "MetricsReport", "QueryTemplate", "TEMPLATES", "WorkloadConfig",
           "compare_plans_report", "generate_dataset", "operation_sequence", "run_workload"]
