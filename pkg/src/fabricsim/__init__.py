"""Cycle-accurate comparison of single-stage and multi-stage switch fabrics
with strict-priority arbitration, plus closed-form fabric analytics."""

__version__ = "0.1.0"

from .analytics import (
    AnalyticParams,
    BufferScheme,
    MetricSet,
    buffer_memory,
    complexity,
    cost_per_unit_multi,
    cost_per_unit_single,
    metric_set,
    path_length_effectiveness,
    reliability_multi_stage,
    reliability_single_stage,
    terminal_reliability_monte_carlo,
)
from .router import Packet, Priority, PriorityMode, VCState, VirtualChannel
from .simengine import (
    ConfigError,
    SimConfig,
    StatsReport,
    TopoSpec,
    find_saturation,
    run_simulation,
    sweep_injection,
    zero_load_latency,
)
from .topology import (
    FabricKind,
    FabricTopology,
    Link,
    PathGroups,
    SwitchElement,
    TopologyError,
    apply_faults,
    build_benes,
    build_clos3,
    build_single_stage,
    clear_faults,
    count_disconnected_pairs,
    enumerate_paths,
)
