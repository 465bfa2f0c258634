"""incidencelab: a laboratory for dyadic discretized incidence geometry."""

from .dyadic import (
    ALTERNATE,
    STANDARD,
    UNIT_SQUARE,
    DyadicCube,
    DyadicTube,
    Homothety,
    Line,
    Point,
    Scale,
    as_k,
    cover_tubes,
    cube_containing,
    dualize,
    incident,
    rescale,
    rescale_tube,
    tube_meets_cube,
    tube_witness,
)
from .incidence import (
    BoundReport,
    Configuration,
    Niceness,
    check_discretized_st,
    check_elementary_st,
    check_tube_count,
    cor_lower_bound,
    count_incidences,
    count_point_line_incidences,
    exponent_formulas,
    pair_tube_count,
)
from .experiment import (
    ExperimentConfig,
    RunManifest,
    canonical_json,
    run_experiment,
    verify_run,
    write_run,
)
from .generators import (
    GenerationError,
    cantor1d,
    cantor_target,
    cover_counterexample,
    dual_view,
    exceptional_projection_config,
    furstenberg,
    nice_random,
    product_structure,
    regular_random,
    two_regime,
)
from .multiscale import (
    BoundParams,
    Decomposition,
    PiecewiseLinear,
    ScaleDecomposition,
    check_multiscale_bound,
    decompose,
    decompose_oracle,
    dichotomy_check,
    extract_product_structure,
    refine_cover,
    refine_two_scale,
    scales_from_decomposition,
)
from .projections import (
    Direction,
    DirectionGrid,
    direction_set,
    exceptional_survey,
    projection_covering,
    prune_bad_directions,
)
from .spread import (
    BranchingFunction,
    SpreadReport,
    branching_function,
    check_between_scales,
    check_regular,
    check_spread,
    check_tube_spread,
    covering_number,
    uniformize,
)

__version__ = "0.1.0"
