"""Decentralized nonconvex optimization with mixing-accelerated primal-dual proximal steps."""

from mappro.errors import (
    ComparabilityError,
    ConfigurationError,
    DivergenceError,
    InfeasibleParameters,
    InvariantViolation,
    MapProError,
    SmoothnessViolation,
    UnsupportedDiagnostic,
)
from mappro.graph import (
    GossipMatrix,
    Network,
    SpectralBounds,
    laplacian,
    random_connected_graph,
    spectral_bounds,
)
from mappro.mixing import (
    Chebyshev,
    Explicit,
    GOperator,
    RoundCounter,
    apply_G,
    cacc,
    compute_eta,
    macc,
    polynomial_spectral_range,
    rescale_for_chebyshev,
)
from mappro.problems import (
    LogisticNonconvexData,
    ProblemInstance,
    estimate_smoothness,
    generate_benchmark_data,
    logistic_nonconvex,
    pl_quadratic,
)
from mappro.algorithm import (
    AlgoConfig,
    AlgoState,
    LemmaConstants,
    init_state,
    l_admm_config,
    lemma_constants,
    run,
    select_parameters,
    step,
)
from mappro.metrics import (
    Diagnostics,
    DiagnosticsRecord,
    check_descent,
    check_rates,
    optimality_gap,
    w_metric,
)

__version__ = "0.1.0"
