from .config import ExperimentConfig, load_config, validate_config
from .runner import RunReport, SpectraReport, run_single, run_spectra, run_sweep
