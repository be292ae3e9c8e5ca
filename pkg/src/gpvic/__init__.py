"""Interactive learning of variable-impedance attractor and stiffness policies."""

__version__ = "0.1.0"
