"""Exception types raised by the design and evaluation routines."""


class HandballError(Exception):
    """Base class for design-time failures."""


class SingularScalingError(HandballError, ValueError):
    """A quantizer linearization needs the inverse of a zero rail power."""


class InfeasiblePowerError(HandballError):
    """Quantization distortion alone exhausts the transmit power budget."""


class DegenerateChannelError(HandballError, ValueError):
    """The channel carries no energy, so it has no dominant direction."""
