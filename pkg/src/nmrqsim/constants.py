"""Numerical tolerances shared by every module.

Kept in one table so that a reviewer can see at a glance how strict each
class of check is.
"""

#: algebraic identities (Pauli relations, tensor entries, trace preservation)
ALGEBRAIC = 1e-12
#: unitarity of propagators, ||U^dag U - I||_max
UNITARY = 1e-10
#: eigen-residuals and eigenvalue comparisons, relative to ||M||_max
EIG = 1e-9
#: hermiticity accepted on input to the eigen-solver
HERMITIAN_INPUT = 1e-9
#: hermiticity of a matrix flagged Hermitian on output
HERMITIAN = 1e-12
#: eigenvalues closer than this (relative) are treated as one degenerate cluster
DEGENERACY = 1e-9
#: components smaller than this count as zero when ordering degenerate eigenvectors
ZERO_COMPONENT = 1e-9
