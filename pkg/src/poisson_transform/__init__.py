"""Poisson transform and noise-contrastive estimation for unnormalised models."""
from ._backend import BACKEND
from .chain import BenchmarkConfig, BenchmarkRow, run_benchmark, sample_chain, sample_iid, summarize
from .errors import CapabilityError, DomainError, NumericalError, PoissonTransformError
from .kernels import Kernel, KernelBasis, KernelExpansion, median_bandwidth
from .mc import McGradient, SgaSchedule, mc_gradient, sga_fit
from .model import (
    ConditionalEnergyModel,
    Domain,
    ReferenceDensity,
    SampleSet,
    freeze,
    toy_iid_model,
    toy_model,
    uniform_reference,
)
from .ncd import (
    LabeledPoint,
    LogisticFit,
    NcdDataset,
    build_dataset,
    fit_ncd_ignore,
    fit_ncd_iid,
    fit_ncd_param,
    fit_ncd_semi,
    ncd_objective,
    select_lambda,
)
from .poisson import (
    PenaltyConfig,
    check_concavity,
    confidence_from_m,
    fit_poisson_chi,
    fit_poisson_joint,
    lambda_path,
    m_chi_objective,
    m_objective,
    m_seq_objective,
    nu_star,
)
from .quadrature import QuadratureRule, exact_loglik, fit_ml, gauss_legendre, log_partition
from .results import FitResult

__version__ = "0.1.0"

__all__ = [
    "ConditionalEnergyModel",
    "Domain",
    "ReferenceDensity",
    "SampleSet",
    "freeze",
    "toy_iid_model",
    "toy_model",
    "uniform_reference",
    "LabeledPoint",
    "LogisticFit",
    "NcdDataset",
    "build_dataset",
    "fit_ncd_ignore",
    "fit_ncd_iid",
    "fit_ncd_param",
    "fit_ncd_semi",
    "ncd_objective",
    "select_lambda",
    "PenaltyConfig",
    "check_concavity",
    "confidence_from_m",
    "fit_poisson_chi",
    "fit_poisson_joint",
    "lambda_path",
    "m_chi_objective",
    "m_objective",
    "m_seq_objective",
    "nu_star",
    "BACKEND",
    "BenchmarkConfig",
    "BenchmarkRow",
    "run_benchmark",
    "sample_chain",
    "sample_iid",
    "summarize",
    "CapabilityError",
    "DomainError",
    "NumericalError",
    "PoissonTransformError",
    "Kernel",
    "KernelBasis",
    "KernelExpansion",
    "median_bandwidth",
    "McGradient",
    "SgaSchedule",
    "mc_gradient",
    "sga_fit",
    "QuadratureRule",
    "exact_loglik",
    "fit_ml",
    "gauss_legendre",
    "log_partition",
    "FitResult",
    "__version__",
]
