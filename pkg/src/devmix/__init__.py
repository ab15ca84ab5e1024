"""devmix: deviated mixture models.

A library plus CLI for the model p(x) = (1 - lambda) h0(x) + lambda F(x, G)
with a known component h0: exact density evaluation and sampling for three
h0 families, EM estimation of (lambda, G) under exact-/over-fitted constraint
classes, Wasserstein-type parameter-error metrics by exact optimal transport,
the partially-distinguishable regime machinery, and a seeded experiment
harness that measures convergence-rate slopes and inverse-bound ratios at
desk scale.
"""

from .errors import EvaluationError, InputError
from .estimation import EmConfig, FitResult, em_fit, init_kmeanspp
from .harness import (
    Metric,
    RateFit,
    RateRow,
    RateTable,
    ScenarioConfig,
    emit_outputs,
    fit_rate,
    run_scenario,
    verify_inverse_bound,
    verify_pathological_regime_b,
)
from .known_density import (
    GaussianMixtureH0,
    KdeH0,
    PwlPushforwardH0,
    TailClass,
    eval_h0,
    sample_h0,
    tail_class,
)
from .mixing import (
    Atom,
    ConstraintClass,
    MixingMeasure,
    convex_combine,
    location_measure,
    rho,
    w_bar,
    wasserstein,
    wasserstein_power,
)
from .model import (
    DeviatedMixture,
    DivergenceEstimate,
    FamilyTag,
    hellinger,
    log_likelihood,
    pdf,
    sample,
    total_variation,
)
from .regimes import (
    I_lambda,
    RegimeReport,
    classify_regime,
    distinguishability_probe,
    minimize_polynomial_residual,
    overline_G_star,
    polynomial_system_residual,
    r_bar,
    ratio_independent,
    set_B_contains,
    tilde_G_star,
)
from .scenarios import builtin_scenario, half_circle_h0, half_circle_scenario, partial_overlap_scenario

__version__ = "0.1.0"
