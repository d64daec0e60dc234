"""Simultaneous superiority and non-inferiority testing on multiple endpoints.

The unified test declares success when at least one endpoint is superior and
every endpoint is non-inferior, all at a single adjusted level ``alpha'``
chosen so that the familywise Type I error stays at ``alpha``.
"""

__version__ = "0.1.0"

from supnoninf.exceptions import (  # noqa: E402
    AccuracyNotReachedError,
    BracketError,
    ConvergenceError,
    InvalidParameterError,
    NumericalError,
    UnreachableTargetError,
)
from supnoninf.mvt import (  # noqa: E402
    CorrelationMatrix,
    Rectangle,
    mvt_exch_tail_prob,
    mvt_rect_prob,
    t_quantile,
    t_tail,
)
from supnoninf.error_rates import (  # noqa: E402
    ThetaConfig,
    gamma1,
    gamma1_p,
    gamma2,
    gamma2_p,
    mc_rejection_rate,
    worsley_bound,
)
from supnoninf.solver import (  # noqa: E402
    AdjustedAlpha,
    SolverConfig,
    figure1_curve,
    solve_adjusted_alpha,
    table1_grid,
)
from supnoninf.trial import (  # noqa: E402
    Decision,
    EndpointSummary,
    MarginSpec,
    TrialResult,
    analyze,
    armitage_parmar_rho0,
    pooled_correlation,
    simultaneous_ci,
    standardize_margins,
    t_statistics,
)
from supnoninf.power import PowerSpec, analytic_power, min_sample_size  # noqa: E402
from supnoninf.comparators import blt_test, pw_test, tl_test  # noqa: E402
from supnoninf.simulation import SimScenario, run_scenario, sample_mvn_group  # noqa: E402
