"""Event-camera subframe splitting, sparse attention and STME features."""

from .accumulator import EventFrame, RenderedFrame, accumulate, encode_ppm, frame_to_tensor, render
from .des import EventClusterSet, SplitConfig, split, split_to_single
from .errors import (
    BoundsError,
    ConfigError,
    DegenerateRowError,
    DimensionError,
    EvkitError,
    InvalidStatisticsError,
    LengthError,
    NumericFailureError,
    ParseError,
    PolarityError,
    UnsupportedKernelError,
)
from .esa import SparsityConfig, dense_attention, sparse_attention, sparse_attention_grads, topk_mask
from .events import (
    Event,
    EventStream,
    SensorGeometry,
    parse_binary,
    parse_csv,
    validate,
    write_binary,
    write_csv,
)
from .stme import PoolParams, STMEParams, multi_scale_pool, stme_forward

__version__ = "0.1.0"
