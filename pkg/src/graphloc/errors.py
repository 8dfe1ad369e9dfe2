"""Exception hierarchy. Every error carries a stable machine-readable ``code``."""


class GraphLocError(Exception):
    code = "ERROR"


class ShapeError(GraphLocError, ValueError):
    code = "SHAPE_ERROR"


class ParameterError(GraphLocError, ValueError):
    code = "PARAMETER_ERROR"


class ContractError(GraphLocError, ValueError):
    code = "CONTRACT_ERROR"


class InputError(GraphLocError, ValueError):
    code = "INPUT_ERROR"


class EmptyVideoError(InputError):
    code = "EMPTY_VIDEO"


class DegenerateVideoError(InputError):
    code = "DEGENERATE_VIDEO"


class FormatError(GraphLocError, ValueError):
    code = "FORMAT_ERROR"


class TruncationError(FormatError):
    code = "TRUNCATED_FILE"


class DataError(GraphLocError, ValueError):
    code = "DATA_ERROR"


class SchemaError(GraphLocError, ValueError):
    code = "SCHEMA_ERROR"


class SpecError(GraphLocError, ValueError):
    code = "SPEC_ERROR"


class PairingError(GraphLocError, RuntimeError):
    code = "PAIRING_ERROR"


class DivergedError(GraphLocError, RuntimeError):
    code = "DIVERGED"


class ConfigError(GraphLocError, ValueError):
    code = "CONFIG_ERROR"
