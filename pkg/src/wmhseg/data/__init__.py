from .augment import AugmentConfig, augment
from .patches import (DEFAULT_PATCH_SIZE, Patch, TrainingItem, build_training_items, crop, prepare_sample,
                      resolve_channels, sample_patch, task_target)
from .phantom import PhantomSpec, generate_phantom, generate_phantoms
