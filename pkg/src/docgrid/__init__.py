"""docgrid: a self-contained CNN toolkit for document-image classification.

Everything runs on numpy arrays in NCHW float32 layout; layers, gradients,
preprocessing, augmentation, training, evaluation, and introspection are all
implemented here and verified against independent oracles in the test suite.
"""

from .augment import (ARPolicy, ConcreteTransform, TransformSpec,
                      apply_ar_policy, apply_transform, make_views,
                      sample_scale, sample_transform)
from .config import ConfigError, ExperimentConfig, load_config, load_profile
from .data import Dataset, Pipeline, load_dataset
from .imaging import (RawImage, RepresentationSpec, dense_surf_grid,
                      integral_image, normalize, otsu_binarize, read_image,
                      rgb_to_hsv, stack_representations, to_grayscale)
from .inference import (PredictionReport, evaluate, predict,
                        predict_multiscale, predict_multiview)
from .introspect import (NeuronRef, PatchRecord, deconv_visualize,
                         receptive_field, spatial_response_map, top_k_patches)
from .network import (ArchSpec, Checkpoint, LayerConfig, Model,
                      build_alexnet, forward, init_params, load_checkpoint,
                      save_checkpoint, scale_for_input)
from .ops import (ConvGeometry, conv2d, conv2d_grad, matmul_affine,
                  matmul_affine_grad)
from .synthdoc import CLASSES, generate_dataset, generate_sample
from .trainer import (DivergedError, TrainConfig, TrainLog, lr_at, sgd_step,
                      train, train_multiscale)

__version__ = "0.1.0"
