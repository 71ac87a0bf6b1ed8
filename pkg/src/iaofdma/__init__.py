"""Multi-cell OFDMA downlink resource allocation with frequency-domain interference alignment."""

__version__ = "0.1.0"

from .channel import (  # noqa: E402
    ChannelTensor,
    SystemDims,
    UserLayout,
    classify_regions,
    gen_heterogeneous_channels,
    gen_symmetric_channels,
)
from .ia import distributed_ia, effective_gains, least_eigvec_2x2_hermitian, pair_subcarriers  # noqa: E402
from .schemes import (  # noqa: E402
    SchemeResult,
    build_subband_partition,
    run_hybrid,
    run_ia,
    run_ofp,
    run_traditional,
)
from .harness import ExperimentConfig, ResultTable, emit_csv, emit_plot, run_experiment  # noqa: E402
