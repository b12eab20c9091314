"""Two-view robust estimation with a learned minimal-sample filter."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateInput,
    DegenerateModel,
    DegenerateSample,
    EmptyDataset,
    FormatError,
    GenerationFailed,
    NearParallelRays,
    NefsacError,
    NoModelFound,
    NotEnoughData,
    ShapeMismatch,
    SolverFailure,
)
from .geometry import CameraIntrinsics, Pose  # noqa: E402
from .nnfilter import FilterNetwork, ScoreOutput, TrainConfig  # noqa: E402
from .ransac import EstimateResult, UsacConfig, estimate  # noqa: E402
from .synth import SceneConfig, SyntheticScene, generate_scene  # noqa: E402
