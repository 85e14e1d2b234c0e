"""Control synthesis and verification for half-space differential inclusions
on corank-one, step-two sub-Riemannian structures."""

from .controls import (
    AdmissibleControl,
    ControlPiece,
    Partition,
    PiecewiseAffineMap,
    concatenate,
    controls_equal,
    evaluate,
    evaluate_effective,
    load_control,
    lp_distance,
    lp_norm,
    reparametrize,
    save_control,
    star_chain,
    truncation_homotopy,
    validate,
)
from .dynamics import (
    Trajectory,
    endpoint,
    recover_control,
    solve,
    trajectory_to_csv,
    uniform_distance,
    verify_inclusion,
    w1p_distance,
)
from .geometry import (
    FramePatch,
    StructureConstants,
    SubRiemannianStructure,
    compute_constants,
    drift_field,
    get_patch,
    kernel_basis,
    lie_bracket,
    local_frame,
    minimal_coefficients,
    verify_step2,
    wedge_norm,
)
from .homotopy import (
    BasePointHomotopy,
    based_lift,
    circle_scenario,
    lift_homotopy,
    lift_loop,
    loop_control,
    lp_continuity_probe,
    reparam_lift,
)
from .models import by_name, flat_invalid, from_config, heisenberg, torus_contact
from .planner import (
    FlowWord,
    SectionParams,
    bch_residual,
    flow_word_endpoint,
    locality_radius,
    plan,
    rank_margin,
    rank_margin_floor,
    section,
    solve_psi,
)

__version__ = "0.1.0"
