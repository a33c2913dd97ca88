"""White-matter lesion segmentation and regional localization from T1/FLAIR MRI."""

from .core import (FLAIR, T1, InputConfig, LabelMap, Sample, TaskKind, TaskSpec, Volume, assert_aligned,
                   load_volume, normalize, save_volume)
from .errors import (AlignmentError, ConfigurationError, DataError, FusionError, GenerationError, ShapeError,
                     TrainingError, WMHSegError)

__version__ = "0.1.0"
