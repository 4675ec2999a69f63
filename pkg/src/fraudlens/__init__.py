"""fraudlens: panel-data financial-fraud classification and explanation.

Pipeline stages: synthetic data or CSV panels, gray-sample anomaly
filtering, panel-to-grayscale-image transformation, a small convolutional
network trained from scratch, threshold-tuned evaluation, an L1 logistic
baseline, and Grad-CAM overlays exported as portable images.
"""

from .data import (
    FRAUD_CODES,
    DataError,
    FraudLabel,
    IndicatorSchema,
    PanelDataset,
    SchemaEntry,
    derive_labels,
    load_panel_csv,
    load_schema_csv,
    load_violations_csv,
    ordered_columns,
    write_panel_csv,
)
from .anomaly import IsoForest, IsoTree, anomaly_score, c_factor, filter_gray, fit_iforest
from .features import (
    ImageSet,
    ZScaler,
    drop_sparse_features,
    impute_missing,
    smote_balance,
    to_images,
    zscore_fit_apply,
)
from .training import (
    Metrics,
    SplitSpec,
    ThresholdCurve,
    TrainReport,
    auc,
    classification_metrics,
    evaluate,
    select_threshold,
    stratified_split,
    threshold_sweep,
    train_loop,
)
from .baseline import LinearModel, fit_l1_logreg, predict_binary, temporal_split
from .explain import FeatureMapGrid, Heatmap, OverlayImage, gradcam, layer_activations, upsample_overlay
from .netpbm import export_image, read_pgm, read_ppm
from .synth import GroundTruth, SynthConfig, generate_synthetic
from .config import RunConfig, parse_config, resolve_config

__version__ = "0.1.0"
