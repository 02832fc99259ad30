"""Exception hierarchy shared across the toolkit."""


class FragmentaError(Exception):
    """Base class for all toolkit errors."""


class InvalidGeometryError(FragmentaError):
    """Degenerate or inconsistent geometric input."""


class InvalidInputError(FragmentaError):
    """Input violates an operation's precondition."""


class DegenerateConfigurationError(FragmentaError):
    """A fit or estimate has no unique solution for this input."""


class InvalidMaskError(FragmentaError):
    """Mask is empty or not a single connected component."""


class InvalidCutError(FragmentaError):
    """A cut polyline failed to split a fragment into exactly two pieces."""


class GenerationRetry(FragmentaError):
    """Signal: abandon the current tearing iteration and try another."""


class NoModelError(FragmentaError):
    """RANSAC could not produce a transform (too few correspondences)."""


class InvalidBatchError(FragmentaError):
    """A contrastive batch lacks positives or negatives for some anchor."""


class TrainingDivergence(FragmentaError):
    """Loss exceeded the divergence threshold for too many steps."""


class UndefinedMetricError(FragmentaError):
    """Metric has no value on this input (e.g., empty ground-truth set)."""


class ConfigError(FragmentaError):
    """Bad run configuration (CLI exit code 2)."""


class DataError(FragmentaError):
    """Missing or inconsistent data files (CLI exit code 3)."""


class FormatError(DataError):
    """File declares an unsupported major format version."""
