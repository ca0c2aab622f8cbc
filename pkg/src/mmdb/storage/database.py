"""A directory of tables sharing one block cache."""

from __future__ import annotations

import os
import threading
from dataclasses import replace

from mmdb.errors import DuplicateTableError, SchemaError
from mmdb.storage.blocks import BlockCache, IOStats
from mmdb.storage.table import MANIFEST, Table, TableConfig
from mmdb.types import TableSchema

DEFAULT_CACHE_BYTES = 512 * 1024 * 1024


class Database:
    def __init__(self, data_dir: str, cache_bytes: int = DEFAULT_CACHE_BYTES,
                 config: TableConfig | None = None):
        self.data_dir = data_dir
        self.config = config or TableConfig()
        self.io = IOStats()
        self.cache = BlockCache(cache_bytes, self.io)
        self._tables: dict[str, Table] = {}
        self._lock = threading.Lock()
        os.makedirs(data_dir, exist_ok=True)
        for name in sorted(os.listdir(data_dir)):
            path = os.path.join(data_dir, name)
            if os.path.isfile(os.path.join(path, MANIFEST)):
                schema = Table.read_schema(path)
                self._tables[schema.table_name] = Table(path, schema, self.cache, replace(self.config))

    def create_table(self, schema: TableSchema, config: TableConfig | None = None) -> Table:
        if not isinstance(schema, TableSchema):
            raise SchemaError("create_table expects a TableSchema")
        with self._lock:
            if schema.table_name in self._tables:
                raise DuplicateTableError(f"table {schema.table_name!r} already exists")
            path = os.path.join(self.data_dir, schema.table_name)
            if os.path.exists(os.path.join(path, MANIFEST)):
                raise DuplicateTableError(f"table {schema.table_name!r} already exists on disk")
            t = Table(path, schema, self.cache, config or replace(self.config), create=True)
            self._tables[schema.table_name] = t
            return t

    def table(self, name: str) -> Table:
        try:
            return self._tables[name]
        except KeyError:
            raise SchemaError(f"no table named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tables

    @property
    def tables(self) -> dict[str, Table]:
        return dict(self._tables)

    def close(self, flush: bool = False):
        for t in self._tables.values():
            t.close(flush=flush)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
