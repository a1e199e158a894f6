"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: usage/config problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class WxpromptError(Exception):
    """Base class for all package errors."""


class ConfigError(WxpromptError):
    """Invalid configuration value or inconsistent config combination."""


class UsageError(WxpromptError):
    """API misuse: wrong call order, reused single-use object, bad arguments."""


class ShapeError(WxpromptError):
    """Tensor or frame dimensions do not line up."""


class NumericError(WxpromptError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class RegistryError(WxpromptError):
    """Unknown task, modality, or missing registration."""


class CapacityError(WxpromptError):
    """A fixed model limit (e.g. maximum canvas frames) was exceeded."""


class ValidationError(WxpromptError):
    """A prompt quadruple or canvas violates its task contract."""


class DataError(WxpromptError):
    """Dataset, manifest, or file-container problem (corruption, bad version,
    missing samples, out-of-range timestamps)."""


class SamplingError(DataError):
    """A prompt pool is empty or too small for the requested policy."""
