"""4D light-field super-resolution with hand-rolled differentiable kernels."""

from .tensor import Epi, FeatureTensor, LightField, extract_epi, for_each_view, pack_batch, unpack_batch
from .ops import (
    AgbnState,
    Conv4DLayer,
    agbn_backward,
    agbn_forward,
    angular_interpolate,
    channel_to_space,
    conv4d_backward,
    conv4d_forward,
    glorot_init,
    leaky_relu,
    leaky_relu_backward,
    make_agbn,
    make_conv4d,
    space_to_channel,
    upscale,
)
from .network import (
    Model,
    ModelConfig,
    ResidualBlock,
    TileSpec,
    baseline_upsample,
    build_model,
    connect,
    forward,
    super_resolve,
)
from .losses import FeatureExtractor, LossWeights, angular_loss, combined_loss, spatial_loss
from .metrics import lightfield_ssim, mean_psnr, psnr, psnr_per_view, ssim
from .data import (
    DegradeSpec,
    MultiRangeSpec,
    SceneLayer,
    SyntheticScene,
    angular_selection,
    degrade,
    degrade_reference,
    make_random_scene,
    multi_range_sample,
    render_synthetic,
    sample_patch,
)
from .train import TrainConfig, evaluate, load_model, lr_schedule, save_model, sgd_step, train

__version__ = "0.1.0"
