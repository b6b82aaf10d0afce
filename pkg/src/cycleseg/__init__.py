"""Joint unpaired volume translation and 3D nuclei instance segmentation."""

from .augment import AugmentConfig, PatchPair, SpatialTransform, corrupt, spatial_augment
from .codec import (
    BcdTriple,
    CodecParams,
    connected_components,
    decode_bcd,
    encode_bcd,
    marker_watershed,
    signed_distance,
)
from .inference import (
    APReport,
    InferConfig,
    evaluate_ap50,
    histogram_match,
    iou_matrix,
    segment_volume,
    segment_with_checkpoint,
    sliding_window_predict,
)
from .losses import (
    LossBreakdown,
    cycle_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    structural_consistency_loss,
    supervised_seg_loss,
    total_objective,
)
from .networks import (
    DiscriminatorConfig,
    DualHeadUNet3D,
    GeneratorConfig,
    GeneratorOutput,
    PatchDiscriminator3D,
)
from .phantom import PhantomConfig, RenderStyle, make_phantom
from .trainer import DomainVolume, TrainConfig, Trainer, generator_objective, load_generators
from .volumes import IntensityVolume, LabelVolume, VolumeSpec, load_volume, resample, save_volume

__version__ = "0.1.0"
