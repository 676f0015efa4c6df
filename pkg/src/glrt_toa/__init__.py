"""GLRT-based time-of-arrival estimation for multi-antenna receivers.

Submodules
----------
waveforms  synchronization waveforms and DFT-domain delay templates
channel    multipath + interference window synthesis, CIR files
glrt       score function and the coarse/fine ToA search
baselines  normalized-correlation reference detectors
metrics    ROC/AUC, error CDFs and the resolvability sweep
harness    experiment configs, Monte-Carlo runners and the CLI
"""

__version__ = "0.1.0"

from .waveforms import SyncWaveform, PulseShape  # noqa: F401
from .channel import ArrayGeometry, Mpc, MultipathScenario, ObservationWindow  # noqa: F401
from .glrt import EstimatorConfig, ToaEstimate, estimate_toa  # noqa: F401
