"""Monte-Carlo simulation and analysis of twin-beam photon-number statistics."""
from .calibration import (EfficiencyEstimate, FitResult, alpha_beta_theory, estimate_eta1,
                          fit_nrf_linear, photons_to_energy, squeezing_db)
from .conditioning import (ConditionalResult, ConditioningSpec, apply_window, conditional_fano,
                           select, sweep_center, sweep_q, theoretical_conditional_fano)
from .errors import (ChecksumError, ConfigParseError, DatasetFormatError, EmptySelectionError,
                     MissingCalibrationError, ParameterError, TruncatedFileError, TwinbeamError,
                     ValidityError, VersionError)
from .io import (ExperimentConfig, PumpSweep, load_config, load_dataset, save_config,
                 save_dataset)
from .model import (Dataset, DetectorParams, Kind, PulseRecord, SourceParams, detect,
                    pump_power_to_n_mode, sample_pulse, sample_thermal_mode, simulate_run)
from .stats import (Estimate, balancing_k, bootstrap_error, empirical_shot_noise, fano,
                    nrf_corrected, nrf_raw, shot_noise_variance, stream_moments)

__version__ = "0.1.0"
