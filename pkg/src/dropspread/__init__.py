"""dropspread: quantify surfactant-enhanced droplet spreading on leaves.

Wet/not-wet segmentation of video frames with a dual-head encoder-decoder
network, wet-area time series and plateau estimation, and CMC fitting from
tensiometry data.
"""

from .area import (AreaSample, MaxAreaEstimate, OpticsScale, cmc_fraction,
                   count_wet_pixels, estimate_max_area, measure_series,
                   pixels_to_area, student_interval)
from .cmc import CmcResult, TensiometryPoint, fit_line, fit_two_regimes
from .ingestion import FrameRecord, extract_frames, index_frame_dir
from .loss import (LossConfig, TargetPair, balanced_bce_from_scores, bce, beta,
                   edge_targets_from_mask, total_loss)
from .model import (CheckpointError, DimensionError, ModelConfig,
                    ModelParameters, PredictionPyramid, build_model, forward,
                    load_checkpoint, merge_with_attention, parameter_count,
                    predict_mask, save_checkpoint)
from .training import (AnnotatedSample, TrainHistory, augment, load_annotated,
                       resize_to_grid, split, train)

__version__ = "0.1.0"
