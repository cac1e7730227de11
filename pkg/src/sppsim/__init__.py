"""2D time-harmonic Maxwell FEM for surface plasmon-polaritons on a conducting sheet."""

__version__ = "0.1.0"
