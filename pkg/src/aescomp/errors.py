"""Exception hierarchy shared by all aescomp modules."""


class AescompError(Exception):
    """Base class for every error raised by this package."""


class IoError(AescompError):
    """A file could not be read or written."""


class DecodeError(AescompError):
    """Bytes that should be an image could not be decoded."""


class ShapeError(AescompError):
    """Dimension mismatch between an input and what an operation expects."""


class NumericsError(AescompError):
    """A computation produced non-finite values."""


class DescriptorMismatch(AescompError):
    """A backbone descriptor disagrees with the graph it points at."""


class CompositionError(AescompError):
    """Feature vectors do not line up with the requested view set."""


class DegenerateLabels(AescompError):
    """Training data contains only one class."""


class ModelMismatch(AescompError):
    """A feature's provenance does not match what the model was trained on."""


class ManifestError(AescompError):
    """A dataset manifest file is malformed."""


class SplitError(AescompError):
    """A train/test split cannot be produced from the given manifest."""


class CacheError(AescompError):
    """The feature cache could not be read or written."""


class FormatError(AescompError):
    """A serialized artifact has an unknown or corrupt format."""


class GraphError(AescompError):
    """A portable graph file could not be parsed or executed."""
