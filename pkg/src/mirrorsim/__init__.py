"""mirrorsim: roadside-perception co-simulation with a mirrored cyber world.

A simulated intersection is sensed by a ray-cast roadside LiDAR, detections
travel over an impaired wire channel to a mirror process that rebuilds the
objects, and a CACC follower consumes the mirror output; the package wires
those stages into deterministic, seeded closed-loop runs.
"""

__version__ = "0.1.0"

from .geometry import OrientedBox, Pose2D, SensorPose
from .scenario import (
    AgentClass,
    AgentSpec,
    AgentState,
    ConfigError,
    IdmParams,
    Lane,
    LabeledBox,
    ScenarioConfig,
    SignalPlan,
    SpeedProfile,
    WorldState,
    ground_truth_objects,
    idm_acceleration,
    init_scenario,
    step_world,
)
from .lidar import LidarConfig, PointCloudFrame, cast_rays, degrade, intensity, scan
from .perception import (
    BevConfig,
    BevMap,
    Detection,
    DetectorParams,
    EvalReport,
    Geofence,
    build_bev,
    detect,
    evaluate,
    f1_score,
    geofence,
    normalize_point,
    oriented_iou,
)
from .protocol import (
    ChannelConfig,
    DeterministicChannel,
    ObjectMsg,
    PerceptionFrame,
    ProtocolError,
    StreamDecoder,
    decode,
    encode,
    sample_delay,
    should_drop,
)
from .mirror import MirroredObject, MirrorRegistry, apply_frame, query_objects
from .cacc import (
    CaseStudyConfig,
    LeaderEstimate,
    LeaderStatus,
    PerceptionScheme,
    TrajectoryLog,
    cacc_step,
    estimate_leader,
    run_case_study,
)
from .dataset import DatasetSpec, record_dataset
