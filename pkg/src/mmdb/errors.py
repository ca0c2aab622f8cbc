class MmdbError(Exception):
    """Base class for engine errors."""


class SchemaError(MmdbError):
    pass


class DuplicateTableError(SchemaError):
    pass


class KindMismatchError(SchemaError):
    """An index kind was paired with a column of the wrong kind."""


class DimensionMismatchError(SchemaError):
    pass


class StorageError(MmdbError):
    pass


class CorruptionError(StorageError):
    """A block or frame failed its checksum."""


class QueryError(MmdbError):
    pass


class UnindexedColumnError(QueryError):
    pass


class ExecutionError(QueryError):
    def __init__(self, message, plan=None):
        super().__init__(message if plan is None else f"{message} [plan: {plan}]")
        self.plan = plan
