from .augment import POLICIES, augment, augment_batch, default_policy
from .datasets import (
    DatasetSpec,
    ImageDataset,
    LabeledImage,
    build_stripe_mnist,
    composite,
    generate_stripes,
    load_image_dir,
    save_dataset,
    stripe_pattern,
)
from .idx import IDXFormatError, load_mnist, read_idx, write_idx
