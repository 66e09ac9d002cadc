"""Link-level Monte Carlo simulator for downlink user-centric cell-free
massive MIMO with rate splitting and mobile users.

Pipeline: random network drops with clustering and pilot assignment ->
time-varying spatially-correlated Rician channels -> uplink LMMSE channel
estimation with pilot contamination -> maximum-ratio precoding with a
common/private power split -> downlink training of the effective channels
-> SIC decoding chain and ergodic spectral-efficiency accumulation.
"""

from cfrsma.config import Mode, SimConfig, ConfigError
from cfrsma.topology import Topology, drop_network
from cfrsma.link_sim import SeReport, ergodic_se, run_modes

__version__ = "0.1.0"

__all__ = [
    "Mode",
    "SimConfig",
    "ConfigError",
    "Topology",
    "drop_network",
    "SeReport",
    "ergodic_se",
    "run_modes",
    "__version__",
]
