"""Size-aware self-supervised classification of SAR aircraft slices.

The pipeline measures each target's physical extent from its scattering
points, feeds the measurement through a size-conditioned embedding branch,
and pretrains the two-sided encoder with momentum contrast plus a
cross-branch consistency term. A frozen-encoder linear probe evaluates the
learned representation at several label fractions.
"""

from .autodiff import Tensor, backward, no_grad
from .checkpoint import (
    load_checkpoint,
    load_encoder_checkpoint,
    save_checkpoint,
    save_encoder_checkpoint,
)
from .contrastive import (
    NegativeQueue,
    PretrainConfig,
    PretrainResult,
    ProjectionHead,
    d_ec_pair,
    d_ec_sets,
    heldout_dec,
    info_nce,
    momentum_update,
    pretrain,
    sp_loss,
)
from .encoder import Encoder, EncoderConfig, build_encoder, encode
from .errors import (
    ConfigError,
    DataError,
    DegenerateSizeError,
    DimensionError,
    NumericError,
    StateError,
)
from .gradcheck import GradCheckResult, grad_check
from .hybrid import HybridBlock
from .images import GrayImage, read_image, write_image
from .probe import (
    EvalReport,
    embed_dataset,
    evaluate,
    linear_probe,
    split_labeled,
)
from .scatter import (
    AxisFit,
    KeyPoint,
    SizeEstimate,
    estimate_size,
    fit_axis,
    harris_laplace,
    measure_size,
    normalize_size,
)
from .size_branch import SizeBranch
from .synth import (
    ClassSpec,
    DatasetManifest,
    SampleSet,
    default_class_specs,
    gen_dataset,
    gen_slice,
    load_dataset,
    read_manifest,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "save_checkpoint",
    "load_checkpoint",
    "save_encoder_checkpoint",
    "load_encoder_checkpoint",
    "NegativeQueue",
    "PretrainConfig",
    "PretrainResult",
    "ProjectionHead",
    "info_nce",
    "d_ec_pair",
    "d_ec_sets",
    "sp_loss",
    "heldout_dec",
    "momentum_update",
    "pretrain",
    "Encoder",
    "EncoderConfig",
    "build_encoder",
    "encode",
    "DataError",
    "ConfigError",
    "NumericError",
    "StateError",
    "DimensionError",
    "DegenerateSizeError",
    "GradCheckResult",
    "grad_check",
    "HybridBlock",
    "GrayImage",
    "read_image",
    "write_image",
    "EvalReport",
    "split_labeled",
    "embed_dataset",
    "linear_probe",
    "evaluate",
    "KeyPoint",
    "AxisFit",
    "SizeEstimate",
    "harris_laplace",
    "fit_axis",
    "measure_size",
    "normalize_size",
    "estimate_size",
    "SizeBranch",
    "ClassSpec",
    "DatasetManifest",
    "SampleSet",
    "default_class_specs",
    "gen_slice",
    "gen_dataset",
    "load_dataset",
    "read_manifest",
    "write_manifest",
    "__version__",
]
