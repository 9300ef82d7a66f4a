"""Cloud-offloaded planar image recognition with latency-hiding tracking.

The client tracks feature points at frame rate and offloads one key frame per
30-frame cycle to a recognition server over UDP; delayed answers are replayed
through the motion observed since the key frame, so recognition latency never
shows up on screen.
"""

from .binary_features import (
    AgastConfig,
    Descriptor512,
    DescriptorArray,
    MatchConfig,
    MatchPair,
    detect_agast,
    extract_freak,
    match_descriptors,
)
from .bmm import BMMParams, EmConfig, FisherVector, encode_fv, fv_dim, train_bmm
from .flow import UNASSIGNED, FeatureSet, FlowConfig, FlowResult, detect_corners, track_optical_flow
from .geometry import (
    Homography,
    Intrinsics,
    Pose6DoF,
    RansacConfig,
    apply_homography,
    apply_homography_points,
    estimate_homography_ransac,
    estimate_rigid_update,
    homography_to_pose,
)
from .image import ImageGray8, Point2, downsample, gaussian_blur, load_image, save_image
from .lsh import LshConfig, LshIndex, build_lsh, query_knn
from .protocol import (
    RecognitionRequest,
    RecognizedObject,
    ResultMessage,
    decode_request,
    decode_result,
    encode_request,
    encode_result,
)
from .recognizer import ObjectIdAssigner, RecognitionOutcome, RecognizerConfig, recognize_frame
from .refindex import IndexConfig, ReferenceEntry, ReferenceIndex, build_reference_index
from .segmentation import SegConfig, SegmentPatch, segment, variance_map
from .server import RecognitionServer, ServerConfig, serve
from .tracker import (
    ClientTracker,
    ObjectState,
    RegenerationTrigger,
    ResultOutcome,
    TrackedObject,
    TrackerConfig,
    TrackingUpdate,
    pixel_error,
)

__version__ = "0.1.0"
