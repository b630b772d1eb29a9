"""Device-independent randomness certification from CHSH trial data.

Pipeline: calibrate a device behaviour from counts, construct optimal
per-trial probability-estimation factors, accumulate certified min-entropy
over a trial stream with early stopping, and extract fixed-size random
blocks with a seeded strong extractor.  An entropy-accumulation trial-count
calculator is included for baseline comparisons.
"""

__version__ = "0.1.0"

from .backend import backend_name
from .bell_model import (
    BiasPolytope,
    ConditionalDistribution,
    InputDistribution,
    PolytopeH,
    TrialRecord,
    VertexList,
    bias_vertices,
    build_polytope,
    chsh_value,
    contains,
    enumerate_vertices,
)
from .calibration import CountTable, max_likelihood, statistical_strength
from .eat import EatInputs, n_eat
from .pef import (
    DEFAULT_F_MAX,
    NoCertifiableRandomness,
    PefTable,
    PlanningReport,
    expected_trials,
    failure_probability,
    optimize_beta,
    optimize_pef,
    qef_log2,
    validate_pef,
)
from .pipeline import (
    PipelineConfig,
    load_reference_tables,
    replay_reference_instances,
    run_instance,
    write_certificate,
)
from .protocol import (
    ProtocolParams,
    RunCertificate,
    accumulate,
    accumulate_counts,
    certified_entropy,
    plan_parameters,
)
from .simulator import SimConfig, biased_inputs, read_trials, sample_trials, tally, write_trials
from .trevisan import ExtractorParams, WeakDesign, extract, extractor_params, one_bit_extract, weak_design

__all__ = [
    "__version__",
    "backend_name",
    "BiasPolytope",
    "ConditionalDistribution",
    "InputDistribution",
    "PolytopeH",
    "TrialRecord",
    "VertexList",
    "bias_vertices",
    "build_polytope",
    "chsh_value",
    "contains",
    "enumerate_vertices",
    "CountTable",
    "max_likelihood",
    "statistical_strength",
    "EatInputs",
    "n_eat",
    "DEFAULT_F_MAX",
    "NoCertifiableRandomness",
    "PefTable",
    "PlanningReport",
    "expected_trials",
    "failure_probability",
    "optimize_beta",
    "optimize_pef",
    "qef_log2",
    "validate_pef",
    "PipelineConfig",
    "load_reference_tables",
    "replay_reference_instances",
    "run_instance",
    "write_certificate",
    "ProtocolParams",
    "RunCertificate",
    "accumulate",
    "accumulate_counts",
    "certified_entropy",
    "plan_parameters",
    "SimConfig",
    "biased_inputs",
    "read_trials",
    "sample_trials",
    "tally",
    "write_trials",
    "ExtractorParams",
    "WeakDesign",
    "extract",
    "extractor_params",
    "one_bit_extract",
    "weak_design",
]
