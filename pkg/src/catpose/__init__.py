"""Category-level object pose from a predicted object-level depth and shape priors."""

from .errors import DegenerateConfigurationError, InvalidInputError, ParseError, TrainingDiverged
from .geometry import BBox2D, CameraIntrinsics, DepthPatch, Pose, back_project, ngph_encode, umeyama_align
from .spd import LossTerms, LossWeights, total_loss

__version__ = "0.1.0"
