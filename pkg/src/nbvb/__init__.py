"""Structured mean field variational Bayes for Negative Binomial semiparametric regression."""
from .basis import SplineBasis, build_basis, evaluate
from .batch import FitOptions, NumericalError, PerAtomFit, StartValues, compute_elbo, fit_batch, fit_single_atom
from .model import (AtomGrid, DesignBlocks, Hyperparams, assemble_design, design_rows,
                    make_atom_grid, simulate_dataset)
from .posterior import (MixturePosterior, accuracy_score, kappa_pmf, linear_predictor_summary,
                        response_summary, sigma2_density)

__version__ = "0.1.0"
