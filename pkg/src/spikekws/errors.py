"""Exception hierarchy. Each class maps to one CLI error category."""


class SpikeKWSError(Exception):
    category = "error"


class ShapeError(SpikeKWSError, ValueError):
    category = "dimension"


class ContractError(SpikeKWSError, RuntimeError):
    category = "contract"


class GeometryError(SpikeKWSError, ValueError):
    category = "geometry"


class NumericError(SpikeKWSError, FloatingPointError):
    category = "numeric"


class DataError(SpikeKWSError, ValueError):
    category = "data"


class FormatError(DataError):
    category = "format"


class CorpusLayoutError(DataError):
    category = "corpus"


class CheckpointError(SpikeKWSError, IOError):
    category = "checkpoint"


class ConfigError(SpikeKWSError, ValueError):
    category = "config"


class TrainingError(SpikeKWSError, RuntimeError):
    category = "training"
