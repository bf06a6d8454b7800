from .config import RunConfig, load_config
from .pipeline import LongTermTracker, run_sequence, run_suite

__all__ = ['RunConfig', 'load_config', 'LongTermTracker', 'run_sequence', 'run_suite']
