"""narrownet: explicit narrow fully connected ReLU approximators.

Builds the constructive approximation networks as explicit weight matrices,
verifies their error/width/depth/weight behavior by direct evaluation, and
runs desk-scale regression rate experiments with the prescribed sizing.
"""

__version__ = "0.1.0"

from .builder import (
    build_approximator,
    build_grouping,
    build_kappa,
    build_naive,
    build_with_plan,
    mlp_convert,
    plan_stats,
)
from .composite import (
    CompositionGraph,
    CompositeVertex,
    build_composite,
    eval_composite,
    load_graph,
)
from .gadgets import (
    MultGadgetConfig,
    build_mult,
    build_product_chain,
    build_psi,
    build_squaring,
)
from .network import (
    LayerSpec,
    NetworkStats,
    ReluNetwork,
    affine_combine,
    assert_fully_connected,
    compose_serial,
    deserialize,
    eval_batch,
    eval_forward,
    pad_depth,
    serialize,
    stack_parallel,
    stats,
)
from .partition import (
    ConstructionPlan,
    choose_delta,
    choose_n,
    eval_f1,
    eval_phi,
    make_plan,
    taylor_coeffs,
)
from .reference import eval_ftilde_reference, make_reference
from .targets import TargetFunction, make_target
from .verify import check_bounds, oracle_compare, sup_error, verify_network
