"""Exception types. Each carries a short machine-readable category used by the CLI."""


class HysageError(Exception):
    category = "error"


class ParseError(HysageError):
    category = "parse"


class DataError(HysageError):
    category = "data"


class ConfigError(HysageError):
    category = "config"


class ShapeError(HysageError, ValueError):
    category = "shape"


class CheckpointError(HysageError):
    category = "checkpoint"


class TrainingError(HysageError):
    category = "training"
