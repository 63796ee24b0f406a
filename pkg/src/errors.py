"""Exception hierarchy shared by the relabeling engine."""


class RelabelError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RelabelError, ValueError):
    """Invalid configuration, or a model/schema that does not fit its inputs."""


class InvalidPairError(RelabelError, ValueError):
    """A link hypothesis whose time gap is not strictly positive."""


class ConsistencyError(RelabelError):
    """Endpoint store used in a way that breaks its invariants."""


class RecordValidationError(RelabelError, ValueError):
    """A raw AIS record outside its field bounds."""


class UnsortedStreamError(RelabelError, ValueError):
    """Posits handed to a tracker are not in (time, point_id) order."""


class TrainingDivergedError(RelabelError):
    """Loss became NaN or infinite during training."""


class MetricInputError(RelabelError, ValueError):
    """Predicted and reference labelings cover different posits."""


class EmptyDatasetError(RelabelError, ValueError):
    """Training or calibration was handed no examples."""
