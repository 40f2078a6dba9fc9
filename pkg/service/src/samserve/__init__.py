"""samserve: promptable segmentation behind a small HTTP wire protocol."""

from .app import create_app
from .config import ServiceConfig
from .model import CheckpointError, ModelError, RegionMapModel, load_checkpoint
from .rle import encode_mask

__version__ = "0.1.0"
