"""LeNet-5 with oriented stripe front-end filters, benchmarked on occluded MNIST."""

from .filter_bank import FilterBank, make_oriented_filter, make_oriented_filter_bank, make_random_filter_bank
from .models import Network, Variant, build_bordernet, build_randomnet, build_vanilla, load_checkpoint, save_checkpoint
from .occlusion import OcclusionSpec, apply_occlusion, occlusion_grid, occlusion_mask

__version__ = "0.1.0"
