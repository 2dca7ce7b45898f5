"""contourkit: patch-level contour detection with voting, guided refinement,
and the ODS/OIS/AP boundary benchmark."""

from .benchmark import BenchmarkScores, PRCurve, PRPoint, aggregate, correspond, pr_curve, thin
from .dataset import (
    DatasetManifest,
    LabelerEdgeSet,
    PatchSample,
    average_ground_truth,
    balance_samples,
    build_dataset,
    extract_multiscale_patch,
    grid_sample_labels,
    load_dataset,
    save_dataset,
)
from .inference import CoarseContourMap, VotingConfig, detect_contours, predict_patch_scores, vote_average
from .network import (
    LayerSpec,
    NetworkModel,
    TrainConfig,
    build_model,
    default_architecture,
    forward,
    load_model,
    loss_and_gradients,
    save_model,
    sgd_step,
    train,
)
from .pnm import read_pnm, read_raw_map, write_pnm, write_raw_map
from .raster import (
    RasterImage,
    downsample_pow2,
    gray,
    luminance,
    resize_area,
    sobel_gradient_magnitude,
    upsample_nearest,
)
from .refine import FineContourMap, RefineConfig, combine_overlaps_max, guided_filter_patch, refine
from .synthetic import generate_corpus, synth_scene

__version__ = "0.1.0"
