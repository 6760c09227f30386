"""Flow-state detection from wrist IMU streams: ingest, preprocessing, splits and classifiers."""

from .datasets import REGIMES, Dataset, SplitMode, SplitSpec, batches, class_balance, make_split
from .errors import (ConvergenceError, DataError, FlowstateError, ParseError, RangeError,
                     TrainingError)
from .preprocess import (SENSOR_RANGES, ChannelRanges, Window, WindowSet, dedup, make_windows,
                         scale, smooth)
from .session_io import (ImuSample, LabelEvent, LabelTrack, Samples, Session, SyncMarker,
                         align_session, capture_labels, detect_sync_markers, parse_motion_csv,
                         reconcile_labels)

__version__ = "0.1.0"
