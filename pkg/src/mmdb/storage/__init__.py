"""LSM storage: write buffer, WAL, segment files, block cache."""

from mmdb.storage.blocks import BlockCache, BlockHandle, IOStats
from mmdb.storage.database import Database
from mmdb.storage.table import Snapshot, Table, TableConfig

__all__ = ["BlockCache", "BlockHandle", "Database", "IOStats", "Snapshot", "Table", "TableConfig"]
