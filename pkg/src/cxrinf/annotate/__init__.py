"""Two-stage human-machine collaborative ground-truth annotation."""

from .campaign import (
    REJECT_ALL,
    AnnotationError,
    AnnotationTask,
    CampaignStore,
    Candidate,
    ConflictError,
    Selection,
    StaleLockError,
    canonical_state_bytes,
    create_stage1,
    create_stage2,
    default_stage1_configs,
    default_stage2_configs,
    replay_events,
)
from .reviewers import OracleReviewer, RandomReviewer, mask_iou, run_http_reviewer, run_store_reviewer
from .service import create_app, serve

__all__ = [
    "REJECT_ALL",
    "AnnotationError",
    "AnnotationTask",
    "CampaignStore",
    "Candidate",
    "ConflictError",
    "Selection",
    "StaleLockError",
    "canonical_state_bytes",
    "create_stage1",
    "create_stage2",
    "default_stage1_configs",
    "default_stage2_configs",
    "replay_events",
    "OracleReviewer",
    "RandomReviewer",
    "mask_iou",
    "run_http_reviewer",
    "run_store_reviewer",
    "create_app",
    "serve",
]
