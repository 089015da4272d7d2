"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Inputs whose dimensions or structure cannot be reconciled."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity reached a public operation."""


class ConfigError(ValueError):
    """Invalid configuration value or command-line usage."""
