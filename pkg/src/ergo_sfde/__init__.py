"""Monte Carlo verification engine for delay jump-diffusions: generalized
coupling, Girsanov/KL control, support bounds and Wasserstein convergence."""
from .model import MarkLaw, ModelSpec, make_builtin
from .segment import Segment, TimeChange, segment_at, skorohod_upper, sup_distance, sup_norm
from .sim import SimConfig, Trajectory, simulate, simulate_auxiliary

__version__ = "0.1.0"
