"""promptseg: mask-to-prompt encoding, point-prompt sampling, and RES/GRES
evaluation for promptable segmenters."""

from .masks import (
    BBox,
    BinaryMask,
    LabeledPoint,
    MaskFormatError,
    RleMask,
    decode_rle,
    denormalize_coord,
    encode_rle,
    iou,
    normalize_coord,
    point_in_mask,
    tight_bbox,
    union_masks,
)
from .codec import (
    NO_TARGET_PHRASE,
    DialogRecord,
    ParseError,
    PointAnswer,
    SamPrompt,
    build_no_target_record,
    build_ppg_record,
    build_pqpp_record,
    parse_answer,
    parse_answers,
    parse_boxes,
    parse_no_target,
    parse_ppg_instances,
    parse_ppg_response,
    serialize_box,
    serialize_points,
)
from .sampling import (
    NoNegativeCandidates,
    PointGroup,
    RankedGroup,
    SamplingConfig,
    derive_rng,
    filter_by_confidence,
    grid_points,
    random_points_in_box,
    rank_groups,
    sample_point_groups,
    sample_pqpp_training_points,
    select_training_groups,
)
from .segmenter import (
    IdentitySegmenter,
    RemoteSegmenter,
    SegmentRequest,
    SegmentResult,
    Segmenter,
    SegmenterError,
    SyntheticSegmenter,
    apply_region_rule,
    scene_from_targets,
    upper_bound_iou,
)
from .metrics import (
    EvalReport,
    SampleScore,
    accumulate,
    ciou,
    giou,
    merge,
    n_acc,
    summary,
)
from .dataset import (
    DatasetManifest,
    RESample,
    load_manifest,
    load_samples,
    rasterize_polygon,
    write_samples_jsonl,
)
from .pipeline import (
    CachingResponder,
    GenOutcome,
    GtOracleResponder,
    InferenceOutcome,
    RemoteResponder,
    Responder,
    ResponderError,
    ScriptedResponder,
    SkipSample,
    generate_no_target_record,
    generate_ppg_record,
    generate_pqpp_record,
    generate_record,
    infer_ppg,
    infer_pqpp,
    run_generation,
    run_inference,
    score_outcomes,
)

__version__ = "0.1.0"
