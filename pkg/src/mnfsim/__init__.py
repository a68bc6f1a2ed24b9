"""mnfsim: functionally exact, cycle-approximate simulator for an event-driven
(multiply-and-fire) sparse CNN accelerator."""

from ._version import __version__

from .model import (
    ConvLayerGeometry,
    FcLayerGeometry,
    HardwareConfig,
    LayerSpec,
    NetworkSpec,
    PoolGeometry,
    PoolSpec,
    QuantParams,
    Tensor,
    WeightStore,
    requantize,
    validate_network,
    validate_weights,
)
from .events import ConvEvent, EndOfData, FcEvent, encode_conv_event, encode_fc_event, event_stream
from .dataflow import (
    Accumulators,
    AccumulatorOverflow,
    apply_conv_event,
    apply_fc_event,
    expand_conv_event,
    fire,
    run_network_functional,
)
from .oracle import dense_conv, dense_fc, dense_maxpool, dense_network
from .mapping import MappedNetwork, PeCapacity, UnmappableLayer, map_network
from .noc import MeshConfig, collect_arrivals, feed_arrivals
from .pe import FiredRecord, PeCounters, PeLayerSim, throughput_lower_bound, utilization
from .metrics import (
    EnergyBreakdown,
    EnergyModel,
    LayerStats,
    SimReport,
    config_digest,
    counter_energy,
    parse_report_json,
    render_csv,
    render_json,
    render_text,
)
from .sim import SimResult, first_divergence, simulate_network, verify_against_oracle
from .netio import (
    FileFormatError,
    ParseError,
    parse_network,
    read_network,
    read_tensor,
    read_weights,
    render_network,
    write_network,
    write_tensor,
    write_weights,
)
from .gen import PRESETS, build, calibrate, exact_density_tensor, preset_network, random_weights
