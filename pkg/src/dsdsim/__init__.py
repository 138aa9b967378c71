# version info
from dsdsim.version import release_version as __version__

# top-level functions to be easily used
from dsdsim.dsd_planner import as2, odld, gamma_zero, speedup, sweep_table
from dsdsim.dsd_specdec import draft_round, verify_round, run_episode
from dsdsim.dsd_transport import ChannelConfig, encode_draft, decode_draft
from dsdsim.dsd_simkit import SyntheticPairSpec, monte_carlo, k_sweep
