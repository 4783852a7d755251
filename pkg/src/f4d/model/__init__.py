from .core import MODEL_FORMAT_VERSION, Model, ModelConfig
from .decoder import OccupancyDecoder
from .encoder import PointSetEncoder
from .vector_field import LatentDynamics
