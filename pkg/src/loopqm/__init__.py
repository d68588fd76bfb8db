"""Monte Carlo model of polarization-entanglement storage in a loop-and-switch
optical quantum memory, with closed-form expectations and fringe/CHSH analysis."""

__version__ = "0.1.0"
