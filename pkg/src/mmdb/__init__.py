"""Embedded multimodal LSM storage and hybrid query engine."""

from mmdb.storage import Database, Table, TableConfig
from mmdb.types import Column, IndexSpec, Point, Polygon, Rect, Record, TableSchema

__all__ = ["Column", "Database", "IndexSpec", "Point", "Polygon", "Rect", "Record", "Table",
           "TableConfig", "TableSchema"]
