"""
Custom exceptions for spider-recon
"""


class SpiderReconError(Exception):
    """Base exception class"""
    pass


class ConfigError(SpiderReconError):
    """Invalid or inconsistent configuration"""
    pass


class ValidationError(SpiderReconError):
    """A domain object violates one of its invariants"""
    pass


class ShapeError(SpiderReconError):
    """Incompatible array or tensor shapes"""
    pass


class DomainError(SpiderReconError):
    """Argument outside the mathematical domain of an operation"""
    pass


class GeometryError(SpiderReconError):
    """Degenerate or mismatched acquisition geometry"""
    pass


class DiagnosticsError(SpiderReconError):
    """A forward computation produced NaN or Inf"""
    pass


class UsageError(SpiderReconError):
    """Autodiff engine used outside its contract"""
    pass


class NoWitnessError(SpiderReconError):
    """The biplanar system matrix has a trivial null space"""
    pass


class VolumeFormatError(SpiderReconError):
    """Base class for SPVOL read failures"""
    pass


class MalformedHeaderError(VolumeFormatError):
    """Header lines missing or unparsable"""
    pass


class PayloadMismatchError(VolumeFormatError):
    """Payload is not a whole number of elements"""
    pass


class DimensionMismatchError(VolumeFormatError):
    """Element count disagrees with the header dims"""
    pass


class UnsupportedVersionError(VolumeFormatError):
    """Unknown format version"""
    pass


class CheckpointError(SpiderReconError):
    """SPCKPT file missing, malformed or incompatible"""
    pass
