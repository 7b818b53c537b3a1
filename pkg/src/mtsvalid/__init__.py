"""Multi-level validation of multivariate industrial sensor time series."""

from .autoencoder import (
    AutoencoderModel,
    ReconstructionReport,
    TrainConfig,
    flag_contextual,
    load_model,
    save_model,
    score,
    train,
)
from .basic import check_bounds, detect_drift, detect_spikes, detect_stuck
from .causal import (
    CausalEdge,
    CausalGraph,
    DatasetValidationReport,
    discover,
    graph_from_csv,
    graph_neighbors,
    graph_to_csv,
    graph_to_dot,
    validate_dataset,
)
from .config import PipelineConfig, load_config
from .core import (
    CouplingSpec,
    NormStats,
    SensorMeta,
    TimeSeriesFrame,
    VarEdge,
    Window,
    extract_windows,
    fit_normalization,
    gen_coupled_process,
    gen_var_process,
    normalize,
    denormalize,
)
from .errors import *  # noqa: F401,F403
from .reasoning import ReasoningConfig, classify
from .reporting import HeatmapSpec, heatmap_matrix, read_verdicts, render_heatmap, write_report
from .simcheck import SimulationResult, crosscheck, reference_simulator, residuals
from .verdicts import AnomalyVerdict, Kind, Label, Level

__version__ = "0.1.0"
