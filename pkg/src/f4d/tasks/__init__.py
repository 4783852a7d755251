from .api import (
    OptimConfig,
    PartialObservation,
    complete,
    evaluate,
    frame_iou,
    future_observation,
    meshes_from_codes,
    metrics_to_csv,
    pose_trajectory,
    predict_future,
    reconstruct_sequence,
    sequence_codes,
    spatial_observation,
    temporal_observation,
    transfer_codes,
    transfer_motion,
    transfer_motion_keep_pose,
)
