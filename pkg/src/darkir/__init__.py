"""darkir: a self-contained low-light restoration engine.

Dense tensor kernels, a reverse-mode autodiff tape, frequency/spatial
attention blocks, an encoder-decoder restoration model, a synthetic
degradation pipeline, a deterministic trainer and an analytic+measured
MAC/parameter profiler, all behind one CLI.
"""

from .autodiff import GradMap, Tape, VarId, backward
from .checkpoint import CheckpointError, load, save
from .conv import ConvSpec, conv2d
from .degrade import (
    BlurKernel,
    DegradationParams,
    SynthSpec,
    degrade,
    load_pairs,
    make_delta_kernel,
    make_gaussian_kernel,
    make_motion_kernel,
    synth_dataset,
)
from .fft import Spectrum, fft2_real, ifft2_real, recombine
from .losses import LossWeights, l_edge, l_lol, l_pixel, psnr, ssim, total_loss
from .model import (
    DarkIRConfig,
    Model,
    build,
    count_macs,
    count_params,
    infer_tensors,
    skip_propagate,
)
from .ppm import read_ppm, write_ppm
from .profiler import MacCounter, instrumented
from .tensor import ShapeError, Tensor, set_verify
from .trainer import (
    NumericalAbort,
    OptimState,
    TrainConfig,
    adamw_step,
    augment_pair,
    cosine_lr,
    train,
)

__version__ = "0.1.0"
