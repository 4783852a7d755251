from .dataset import Dataset, SequenceSample, build_dataset
from .shapes import FAMILIES, make_identity, random_identity
from .warp import WarpField, make_warp
