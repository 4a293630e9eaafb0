"""Zeno-stability certificates for polynomial hybrid systems.

The pipeline: sparse polynomials (poly) feed an SOS programming layer (sos)
that compiles to a self-contained semidefinite solver (sdp); hybrid automata
are modeled and simulated in hybrid; the zeno module assembles the two
Lyapunov feasibility problems, post-verifies certificates by sampling, and
drives parameter studies; cli is the command-line front end.
"""

__version__ = "0.1.0"
