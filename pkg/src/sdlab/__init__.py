"""Analysis toolkit for self-distillation under label noise.

Closed-form ridge teacher/student estimators with exact bias-variance
decomposition in the imitation weight, curves and optimizers for tuning the
ridge penalty jointly with that weight, coupled sigmoid fixed points for
label-flipped binary classification, random block-Gram kernel simulations,
and multi-class softmax distillation probes with three label-corruption
schemes.
"""

__version__ = "0.1.0"

from .exceptions import (
    BracketingError,
    DegenerateDesignError,
    InconsistentSolutionError,
    InvalidInputError,
    SdlabError,
    SolverError,
    StepSizeError,
)
from .gram import GramSpec, KernelModel, build_factors, fit_dual, gram_table
from .logistic import (
    AdvantageInterval,
    CorruptionSetting,
    PredictionProfile,
    StudentDual,
    TeacherDual,
    asymptotic_student_profile,
    asymptotic_teacher_profile,
    group_accuracy,
    maclaurin_residual,
    maclaurin_residuals,
    scan_advantage_window,
    solve_student,
    solve_teacher,
    student_advantage_interval,
    student_predictions,
    teacher_predictions,
    variability,
)
from .probe import (
    CorruptionSpec,
    DistilledSoftmaxProbe,
    FeatureDataset,
    ProbeConfig,
    ProbeResult,
    SoftmaxProbe,
    corrupt_labels,
    distill,
    fit_softmax,
    gaussian_clusters,
    per_class_variability,
    xi_sweep,
)
from .ridge import (
    DenseRidgeProblem,
    NoiseSpec,
    RidgeTeacher,
    SelfDistilledRidge,
    SpectralDesign,
    bias_sq,
    design_from_matrix,
    expected_error,
    mc_expected_error,
    student_fit,
    student_fit_svd,
    teacher_fit,
    variance,
)
from .tuning import (
    CurveRecord,
    error_curve_sweep,
    local_max_condition,
    minimize_reg_error,
    minimize_sd_error,
    optimal_xi,
    optimal_xi_noise_limit,
    powerlaw_design,
    reg_error,
    sd_error,
    sd_error_deriv,
    sd_local_max_sufficient,
    two_mode_design,
)

__all__ = [name for name in dir() if not name.startswith("_")]
