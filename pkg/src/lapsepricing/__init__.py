"""Break-even premiums for whole-life insurance with mortality and surrender killing.

Modules:

* :mod:`~lapsepricing.processes` -- state diffusions, killing rates, path functionals
* :mod:`~lapsepricing.thermodynamic` -- lattice cohort measures and their limit
* :mod:`~lapsepricing.pricing` -- expected returns, premiums, root search
* :mod:`~lapsepricing.bm_step` -- step-rate Brownian backend
* :mod:`~lapsepricing.bessel2sb` -- squared Bessel closed-form backend
* :mod:`~lapsepricing.mc_oracle` -- finite cohort simulation
* :mod:`~lapsepricing.cli` -- batch command line
"""

from .errors import LapsePricingError
from .processes import (AffineRate, AffineSurrender, BrownianDrift, RngStream, SquaredBessel2,
                        StepRate, StepSurrender)
from .thermodynamic import (ExponentialDensity, GaussianDensity, HistogramDensity, InitialMeasure,
                            build_lattice_measure)
from .pricing import (ContractTerms, ReturnEstimate, RootReport, SurrenderProblem,
                      premium_continuous, premium_discrete, solve_premium, var_surrender)

__version__ = "0.1.0"
