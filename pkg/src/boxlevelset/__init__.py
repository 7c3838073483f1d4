"""Instance segmentation from box annotations via level-set evolution.

Given an image and a bounding box, a level-set field initialized at the box
is evolved by gradient descent on a region-based energy plus box projection
and background dice constraints; the zero level of the converged field is
the instance mask. No training, no learned components.

Typical use::

    from boxlevelset import (
        EnergyParams, EvolveConfig, load_annotations, run_dataset,
    )
    records = load_annotations("annotations.json")
    masks, report = run_dataset(records, EnergyParams(), EvolveConfig(),
                                parallelism=4, image_root="images/")
"""

from .grid import (
    AnnotationError,
    BoxAnnotation,
    EnlargedRegion,
    crop_region,
    enlarge_box,
    load_image,
    normalize_image,
)
from .energy import (
    ConfigError,
    EnergyBreakdown,
    EnergyParams,
    classical_energy,
    levelset_energy,
    levelset_gradient,
    length_area,
    region_averages,
    sigmoid,
)
from .constraints import (
    BinaryRegionMasks,
    background_constraint,
    binary_region_masks,
    box_projection_constraint,
    constraint_gradient,
    constraint_loss,
    dice_loss,
)
from .evolve import (
    EvolveConfig,
    EvolveResult,
    evolve_instance,
    initialize_phi,
    threshold_mask,
)
from .pipeline import (
    DatasetRecord,
    GenerationError,
    InstanceMask,
    MetricsReport,
    SynthSpec,
    composite_masks,
    decode_rle,
    encode_rle,
    enlargement_sweep,
    evaluate_masks,
    export_masks,
    format_sweep_table,
    generate_synthetic,
    load_annotations,
    load_ground_truth,
    load_result_masks,
    run_dataset,
)

__version__ = "0.1.0"
