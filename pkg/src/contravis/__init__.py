"""Contrastive 2D visualization of image datasets.

Trains a convolutional encoder whose 2D output arranges a dataset by visual
similarity, using a Cauchy-similarity contrastive objective and a
three-stage schedule, and compares the result against t-SNE baselines with
kNN accuracy and silhouette score.
"""

from .augment import (AugmentationConfig, CropConfig, FlipConfig, GrayscaleConfig,
                      JitterConfig, Rot90Config, RotAnyConfig, ViewPair,
                      apply_stack, compute_border_fill, default_config, image_rng,
                      make_view_pair, resolve_fill_color, rot90k, rotate_any,
                      with_rot90, with_rot_any)
from .baselines import (FeatureMatrix, load_features, pca_reduce, pixel_features,
                        pixel_tsne, pretrained_features, save_features,
                        train_simclr, tsne_embed)
from .data import (ImageDataset, SplitSpec, binarize_labels, load_dataset,
                   merge_rare_classes, resize_images, save_dataset, split_indices)
from .evaluation import (EvalReport, evaluate_embedding, knn_accuracy, load_report,
                         save_report, silhouette, silhouette_values)
from .experiments import (ExperimentConfig, ablation_suite, augmentation_set_config,
                          config_hash, control_experiment_cifar,
                          load_experiment_config, run_experiment)
from .figures import FigureSpec, grid_thumbnail_figure, scatter_figure
from .losses import (LossConfig, cauchy_infonce_loss, cauchy_similarity,
                     contrastive_loss, cosine_similarity, infonce_loss)
from .network import (EncoderModel, build_model, freeze_backbone, load_checkpoint,
                      save_checkpoint, swap_output_layer)
from .results import EmbeddingResult, load_embedding, save_embedding
from .synthetic import make_blob_dataset
from .training import (LRScheduleConfig, OptimizerConfig, TrainConfig,
                       TrainRunRecord, apply_determinism_profile, embed_dataset,
                       learning_rate, run_pipeline, train_stage)

__version__ = "0.1.0"
