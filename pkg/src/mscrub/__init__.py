"""mscrub: remove first/second-order class information from labeled data,
then measure what is left with polynomial probes and prequential MDL."""

from .datagen import BoxClassSpec, GaussianSpec, gen_boxes, gen_gaussian
from .erasers import (
    AffineEraser,
    BarycenterSolution,
    ClassEraser,
    GradientEraseResult,
    apply_eraser,
    deserialize_eraser,
    fit_alf_qleace,
    fit_leace,
    fit_qleace,
    fit_random_projection,
    gaussian_barycenter,
    gradient_erase,
    ot_gaussian_map,
    serialize_eraser,
    w2_gaussian_sq,
)
from .mdl import MdlCurve, make_schedule, mdl_delta_report, prequential_mdl
from .moments import (
    ClassMoments,
    LabeledDataset,
    MomentGapReport,
    fit_moments,
    moment_gap_report,
    zscore_normalize,
)
from .probes import (
    GuardednessReport,
    PolynomialPredictor,
    eval_probe,
    guardedness_report,
    monomials,
    train_probe,
    trivial_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AffineEraser",
    "BarycenterSolution",
    "BoxClassSpec",
    "ClassEraser",
    "ClassMoments",
    "GaussianSpec",
    "GradientEraseResult",
    "GuardednessReport",
    "LabeledDataset",
    "MdlCurve",
    "MomentGapReport",
    "PolynomialPredictor",
    "apply_eraser",
    "deserialize_eraser",
    "eval_probe",
    "fit_alf_qleace",
    "fit_leace",
    "fit_moments",
    "fit_qleace",
    "fit_random_projection",
    "gaussian_barycenter",
    "gen_boxes",
    "gen_gaussian",
    "gradient_erase",
    "guardedness_report",
    "make_schedule",
    "mdl_delta_report",
    "moment_gap_report",
    "monomials",
    "ot_gaussian_map",
    "prequential_mdl",
    "serialize_eraser",
    "train_probe",
    "trivial_loss",
    "w2_gaussian_sq",
    "zscore_normalize",
    "__version__",
]
