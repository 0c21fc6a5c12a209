class SubseasonalForecastError(Exception):
    pass


class GridIndexError(SubseasonalForecastError, IndexError):
    def __init__(self, axis, index, size):
        super().__init__('{} index {} out of bounds [0, {})'.format(
            axis, index, size))
        self.axis = axis


class InvalidMaskError(SubseasonalForecastError, ValueError):
    pass


class DatasetFormatError(SubseasonalForecastError):
    pass


class ManifestVersionError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class CatalogError(DatasetFormatError, ValueError):
    pass


class SplitError(SubseasonalForecastError, ValueError):
    pass


class LeakageError(SubseasonalForecastError):
    pass


class InsufficientDataError(SubseasonalForecastError, ValueError):
    pass


class NotFittedError(SubseasonalForecastError):
    pass


class RankError(SubseasonalForecastError, ValueError):
    pass


class ConfigError(SubseasonalForecastError, ValueError):
    pass


class ConvergenceError(SubseasonalForecastError):
    pass


class ShapeError(SubseasonalForecastError, ValueError):
    def __init__(self, layer, message):
        super().__init__('{}: {}'.format(layer, message))
        self.layer = layer


class ModelFitError(SubseasonalForecastError):
    def __init__(self, failures):
        super().__init__('fit failed at {} location(s): {}'.format(
            len(failures), ', '.join(str(l) for l in sorted(failures))))
        self.failures = failures


class BaseModelError(SubseasonalForecastError):
    def __init__(self, base_id, error):
        super().__init__('base model {!r} failed: {}'.format(base_id, error))
        self.base_id = base_id
        self.error = error


class CatalogMismatchError(SubseasonalForecastError):
    pass


class ParadigmError(ConfigError):
    pass


class EmptyRegionError(SubseasonalForecastError, ValueError):
    pass


class RunError(SubseasonalForecastError):
    """An OS or value failure escaping a command, kept with its cause."""

    def __init__(self, cause):
        super().__init__('{}: {}'.format(type(cause).__name__, cause))
        self.cause = cause
