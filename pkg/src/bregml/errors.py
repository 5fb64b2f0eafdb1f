"""Exception and warning types raised across the package."""


class LayoutMismatch(ValueError):
    """A vector's length or a spec's groups do not match the layout."""


class NoConvLayers(ValueError):
    """A convolution-only metric was requested on a layout without conv groups."""


class InfeasibleInput(ValueError):
    """A (theta, v) pair violates v in the subdifferential of J_delta at theta."""


class NonFiniteGradient(FloatingPointError):
    """A gradient contained NaN or Inf."""


class InfeasibleDensity(ValueError):
    """Layer densities cannot be scaled to reach the requested sparsity."""


class IncompleteTrace(ValueError):
    """A run record is empty or missing FLOP information."""


class KinkProximity(RuntimeWarning):
    """A finite-difference probe came within reach of a ReLU kink."""
