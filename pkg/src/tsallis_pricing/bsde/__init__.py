"""Pricing BSDE: claims, finite differences, regression Monte Carlo and closed forms."""
from .claims import (AdmissibilityError, Claim, ClaimError, check_admissible, clamped_linear_s,
                     constant, digital_s, digital_w, digital_wperp, expression_claim,
                     ramp_indicator, smooth_mixed)
from .closed_form import (attainable_quadrature, certainty_equivalent, risk_neutral, solve_attainable,
                          solve_ce, solve_unhedged, unhedged_quadrature)
from .pde import PDE_TOL, PDEMesh, PicardError, refinement_study, restart_check, solve_pde
from .solution import BSDESolution, OptimalControls, extract_optimizers
from .lsmc import BasisConfig, RegressionError, solve_lsmc
from .dual import FixedPointError, QxiReport, backward_recursion_Ytheta, martingale_check_qxi
