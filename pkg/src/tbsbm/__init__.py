"""Ground-state solvers for the two-bath spin-boson model.

A single spin-1/2 couples through sigma^z to one sub-Ohmic bosonic bath and
through sigma^x to a second one.  The package provides

* orthogonal-polynomial chain mapping of the continuum baths (``bath``),
* truncated Fock-space operator toolbox (``fock``),
* dense exact diagonalization oracles (``ed``),
* MPS-DMRG with restricted / asymmetrically / symmetrically optimized
  phonon bases (``dmrg``),
* parity-symmetry probes and the order parameter zeta (``symmetry``),
* a multi-coherent-state variational solver with rotational optimization
  (``variational``),
* experiment configs, sweeps and the command line driver (``driver``,
  ``cli``).
"""

__version__ = "0.1.0"
