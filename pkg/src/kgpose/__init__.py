"""Knowledge-guided stacked hourglass pose estimation on plain numpy."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .data import GeneratorConfig, generate_dataset, generate_stick_figure, read_dataset, write_dataset
from .decode import PLAIN, DecodeConfig, decode_images, decode_pose, heatmaps_to_pose
from .knowledge import build_knowledge_vector, hog_limb_descriptor, hough_encode
from .metrics import EvalRecord, pck, pckh, pcp_strict, pdj_auc
from .network import FractalNet, NetworkConfig
from .projection import HeadConfig, ProjectionHead, verify_injected_gradient
from .skeleton import SKELETON
from .train import TrainConfig, load_trunk, save_trunk, train_loop

__version__ = "0.1.0"

__all__ = [
    "load_checkpoint", "save_checkpoint",
    "RunConfig", "load_config", "parse_config",
    "GeneratorConfig", "generate_dataset", "generate_stick_figure", "read_dataset", "write_dataset",
    "PLAIN", "DecodeConfig", "decode_images", "decode_pose", "heatmaps_to_pose",
    "build_knowledge_vector", "hog_limb_descriptor", "hough_encode",
    "EvalRecord", "pck", "pckh", "pcp_strict", "pdj_auc",
    "FractalNet", "NetworkConfig",
    "HeadConfig", "ProjectionHead", "verify_injected_gradient",
    "SKELETON",
    "TrainConfig", "load_trunk", "save_trunk", "train_loop",
]
