"""Serial-dilution evolution simulator: daily Yule growth, dilution and beneficial mutations."""

__version__ = "0.1.0"
