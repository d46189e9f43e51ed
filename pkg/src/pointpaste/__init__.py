"""pointpaste: validity-checked object insertion for LiDAR point clouds."""

from .cloud import (IGNORE_LABEL, FormatError, LabelArray, PointCloud,
                    RangeImage, RangeImageConfig, SearchArea, VoxelGrid,
                    bounding_extent, load_labels, load_scan,
                    project_to_range_view, render_range_image, save_labels,
                    save_scan, voxelize)
from .config import CONFIG_ENV, ConfigError, ToolkitConfig, load_config, save_config
from .ground import (GroundDetectorParams, GroundVoxelSet, detect_ground,
                     ground_voxels, ingest_ground, save_ground)
from .insertion import (AugmentedScan, InsertionConfig, InsertionPlacement,
                        PlacedObject, QueryExtent, ValidLocationSet,
                        compute_query_extent, ground_filter, insert_objects,
                        overlap_check, place_object, refine_altitude,
                        sample_locations, style_translate)
from .losses import (EPS_LOG, EmaState, LossComponents, LossWeights, MaskSet,
                     PointPredictions, PredictionMap, SwapPolicy,
                     cross_entropy_loss, cross_modal_kl_loss, ema_update,
                     mask_consistency_loss, mask_filter,
                     pseudo_label_from_probs, read_tensor, swap_pseudo_labels,
                     total_loss, write_tensor, xm_average)
from .pool import (DbscanParams, ObjectInstance, ObjectPool, dbscan_cluster,
                   extract_instances, pool_load, pool_sample, pool_save)

__version__ = "0.1.0"
