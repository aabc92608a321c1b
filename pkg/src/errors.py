"""Exception hierarchy for the fusion pipeline."""


class FusionError(Exception):
    """Base class for all pipeline errors."""


# tensor / autodiff
class ShapeMismatchError(FusionError, ValueError):
    pass


class NonFiniteError(FusionError, ArithmeticError):
    pass


class NonScalarLossError(FusionError, ValueError):
    pass


# scenes and taxonomy
class InvalidBoxError(FusionError, ValueError):
    pass


class TaxonomyError(FusionError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class SceneGenerationError(FusionError, RuntimeError):
    pass


class ConfusionMatrixError(FusionError, ValueError):
    pass


# persistence
class CorruptFileError(FusionError, IOError):
    pass


class MalformedManifestError(FusionError, ValueError):
    pass


# audio / fusion
class InvalidWindowError(FusionError, ValueError):
    pass


class ConfigError(FusionError, ValueError):
    pass


# classifier
class EmptyDatasetError(FusionError, ValueError):
    pass


class LabelError(FusionError, ValueError):
    pass


class TrainingDivergedError(FusionError, RuntimeError):
    pass


# statistics
class SplitError(FusionError, ValueError):
    pass


class ZeroVarianceError(FusionError, ZeroDivisionError):
    pass
