"""Stochastic Lyapunov certification toolkit.

Classifies non-smooth Lyapunov candidates against the generator inequality
via semijet witnesses, synthesizes C^2 smoothing surrogates that certify
forward completeness, certifies LQG closed loops as noisily asymptotically
stable, and cross-checks the verdicts with stopped-process Monte Carlo.
"""

from .candidates import (
    PowerSum,
    Quadratic,
    SemijetElement,
    Smoothed,
    WeightedAbsSum,
)
from .checker import (
    Classification,
    Grid,
    LyapunovVerdict,
    PlainStatus,
    StabilityConclusion,
    check_plain_supersolution,
    check_weak_supersolution,
    classify,
    stability_conclusion,
)
from .connector import (
    ConnectorSpec,
    FcipCertificate,
    FcipGridConfig,
    build_smoothed,
    fcip_certificate,
    fcip_conclusion,
    fit_connector,
)
from .expr import Jet2, compile_array, eval_expr, eval_jet, parse, render
from .generator import GeneratorValue, apply_generator, apply_generator_smooth
from .lqg import (
    LqgCertificate,
    LqgProblem,
    RiccatiSolution,
    SpectralTransform,
    certify_nas,
    closed_loop,
    solve_care,
    spectral_transform,
    transformed_system,
    vlq_value,
)
from .montecarlo import (
    PathStats,
    SimConfig,
    check_chebyshev_bound,
    estimate_stability_profile,
    simulate,
)
from .sde_model import OriginClass, SdeSystem, builtin_example, classify_origin

__version__ = "0.1.0"
