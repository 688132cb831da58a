"""
Exception hierarchy shared by every module; the CLI maps each class to an exit code
"""


class DcaCrnError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class ConfigError(DcaCrnError):
    """Invalid configuration value, unknown key or violated model invariant"""

    exit_code = 2

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UsageError(DcaCrnError):
    """An operation was invoked in a state that does not support it"""

    exit_code = 2


class DimensionError(DcaCrnError):
    """Tensor extents do not fit the requested operation"""

    exit_code = 2


class DataError(DcaCrnError):
    """Input data is malformed or out of range"""

    exit_code = 3


class FormatError(DataError):
    """Binary file is truncated, corrupt or of an unsupported version"""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class NumericError(DcaCrnError):
    """Non-finite values encountered in a computation"""

    exit_code = 4

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}" if epoch is not None else message)
