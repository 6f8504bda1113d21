"""Exception hierarchy.

Grouped so the CLI can map error families onto stable exit codes
(config -> 2, data -> 3, adapter -> 4).
"""


class TerradiffError(Exception):
    """Base class for all package errors."""


class ConfigError(TerradiffError):
    """Bad configuration: invalid values, unknown keys, mismatched presets."""


class DataError(TerradiffError):
    """Bad or missing data: rasters, manifests, tile stores, checkpoints."""


class AdapterError(TerradiffError):
    """A detector/localizer adapter misbehaved (protocol violation, bad output)."""


class RegionError(ConfigError):
    """Invalid city region bounds."""


class ProviderError(DataError):
    """Tile provider failure. Carries provider context in the message."""


class UnsupportedZoomError(ProviderError):
    pass


class AuthError(ProviderError):
    pass


class RetriesExhaustedError(ProviderError):
    pass


class ScheduleError(ConfigError):
    """Invalid noise schedule request."""


class MaskError(DataError):
    """Mask generation failed."""


class MaskAreaError(MaskError):
    """Target area fraction unreachable within the scaling budget."""


class MaskDegenerateError(MaskError):
    """Segmentation collapsed to an empty foreground."""


class PolicyError(ConfigError):
    """Dataset split policy violation (e.g. test-only model requested for train)."""
