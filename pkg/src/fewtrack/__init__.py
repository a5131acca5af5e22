"""Feature-agnostic online few-shot candidate discrimination.

A two-stage tracking engine: an external (or simulated) first stage
proposes scored candidate boxes with features; the second stage keeps a
weighted support set of past picks and scores candidates with small convex
few-shot learners, fusing both stages for the final pick.
"""

from ._kernels import BACKEND
from .core import (
    LABEL_BACKGROUND,
    LABEL_TARGET,
    Box,
    Candidate,
    Sample,
    SupportSet,
    TrackState,
    design_matrix,
    iou,
    nms,
)
from .fusion import FusionConfig, fuse_boxes, fuse_scores, penalize
from .learners import (
    LearnerConfig,
    LearnerKind,
    LearnerState,
    fit_initial,
    fit_metric,
    fit_rr_dual_cls,
    fit_rr_dual_itr,
    fit_rr_prim_itr,
    fit_svm_dual,
    init_theta,
    predict,
    project_dual,
    refresh,
    update_theta_moving_average,
)
from .losses import (
    FocalParams,
    focal_loss,
    ridge_gradient,
    ridge_objective,
    svm_primal_objective,
    svm_slack,
)
from .qpsolver import (
    KKTResiduals,
    QPError,
    QPInfeasibleError,
    QPNumericalError,
    QPProblem,
    QPSolution,
    QPStatus,
    kkt_residuals,
    solve_qp,
)
from .simulator import RunMetrics, SimFrame, SimParams, chosen_index, evaluate_run, generate_sequence
from .tracker import (
    FrameDecision,
    TrackerConfig,
    TrackerSession,
    classify_state,
    init_session,
    step,
)

__version__ = "0.1.0"
