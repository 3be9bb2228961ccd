"""Photon-echo quantum memory simulator.

Subpackages cover chirped-pulse synthesis (pulse), two-level Bloch dynamics
(bloch), inhomogeneous ensembles (ensemble), Maxwell-Bloch absorption and
echo emission (propagation), protocol orchestration (protocol), spectral
random-access scheduling (ram), decay fitting (analysis) and the command
line surface (cli).

Conventions: complex envelopes are Rabi frequencies in a frame rotating at
the carrier omega_0; detunings and Rabi frequencies are angular (rad/s);
ground state is Bloch w = -1.
"""

__version__ = "0.1.0"
