"""Learning quadratic Hamiltonian latent models with weakly symplectic autoencoders."""

__version__ = "0.1.0"
