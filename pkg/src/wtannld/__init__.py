"""Winner-take-all networks of binary-synapse neurons with nonlinear dendrites, trained by spike-timing-driven rewiring."""
from .autotune import TuneResult, choose_m, tau_s_opt, tune_inhibition, tune_neuron
from .dynamics import EventLog, InhibitionParams, KernelParams, NeuronConfig, Wiring, simulate_pattern
from .errors import CalibrationError, FormatError, IntegrityError, ParameterError, SimulationError, WtaError
from .harness import TrialConfig, TrialResult, run_trial, sweep
from .mismatch import MismatchSpec, sample_mismatch
from .plasticity import rewire_after_pattern
from .spikes import JitterSpec, PatternTemplate, gen_poisson_template, load_patterns, make_epoch, save_patterns

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "EventLog", "FormatError", "InhibitionParams", "IntegrityError", "JitterSpec",
    "KernelParams", "MismatchSpec", "NeuronConfig", "ParameterError", "PatternTemplate", "SimulationError",
    "TrialConfig", "TrialResult", "TuneResult", "Wiring", "WtaError", "choose_m", "gen_poisson_template",
    "load_patterns", "make_epoch", "rewire_after_pattern", "run_trial", "sample_mismatch", "save_patterns",
    "simulate_pattern", "sweep", "tau_s_opt", "tune_inhibition", "tune_neuron",
]
