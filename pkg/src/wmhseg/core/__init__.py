from .io import (load_dataset, load_labels, load_sample, load_volume, read_manifest, save_labels,
                 save_sample, save_volume, write_manifest)
from .ops import assert_aligned, check_same_grid, normalize, prepare_input
from .types import (FLAIR, MODALITIES, NUM_REGIONS, T1, InputConfig, LabelMap, Sample, TaskKind,
                    TaskSpec, Volume)
