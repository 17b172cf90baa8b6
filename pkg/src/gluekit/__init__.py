"""gluekit: manifold capacity and representation-geometry analysis.

Quantifies feature learning through the geometry of task-relevant manifolds:
simulated and mean-field capacity estimators, effective geometric measures,
closed-form one-step-training theory, and a two-layer network lab.
"""

__version__ = "0.1.0"

from .activations import get_activation
from .coneqp import (
    ConeProjectionProblem,
    ConeProjectionSolution,
    NumericalError,
    SeparabilityResult,
    nnls,
    project_to_polar_cone,
    strictly_separable,
)
from .glue import (
    AnchorDraw,
    GlueReport,
    capacity_from_geometry,
    estimate_capacity,
    estimate_geometry,
    sample_anchor_draw,
)
from .model import (
    Dichotomy,
    ManifoldEnsemble,
    PointCloudManifold,
    RngStream,
    build_ensemble,
    sample_dichotomy,
    sample_gaussian_probe,
)
from .npyio import load_activations
from .simcap import SimCapacityReport, est_prob, find_critical_dim, simulated_capacity
from .synth import (
    CorrelationSpec,
    SphericalSpec,
    assign_labels,
    gen_correlated_spherical,
    gen_isotropic_gaussian,
    gen_isotropic_spherical,
)
from .theory import (
    accuracy_theory,
    activation_moments,
    capacity_theory,
    constant_label,
    cover_prob,
    effective_label_fn,
    logistic_label,
    mp_expectation,
    one_step_experiment,
    tau_of,
    theta_params,
)
from .twolayer import (
    MetricTrace,
    TrainConfig,
    TwoLayerNet,
    cka,
    forward,
    grad_step,
    init_net,
    make_labeled_data,
    ntk_gram,
    train,
    weight_change,
)

__all__ = [name for name in dir() if not name.startswith("_")]
