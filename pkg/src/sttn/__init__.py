"""Video inpainting with multi-scale patch attention over all frames of a clip,
built on a small numpy autodiff core."""
from .config import Config, load_config
from .data import SamplingPlan, SyntheticSceneSpec, generate_clip
from .losses import LossWeights, d_loss, g_adv_loss, l1_hole, l1_valid, total_loss
from .maskgen import MaskSpec, generate_stationary_mask, load_moving_masks
from .metrics import FlowField, psnr, ssim, warping_error
from .models import Discriminator, Generator, load_checkpoint, save_checkpoint
from .patches import PatchGrid, extract_patches, patch_visibility, reassemble
from .tensor import Tensor, backward, no_grad
from .transformer import TransformerLayer, layer_forward, stack_forward

__version__ = "0.1.0"
