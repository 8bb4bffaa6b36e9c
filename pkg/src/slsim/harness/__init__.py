from slsim.harness.config import ExperimentConfig, config_from_dict, load_config
from slsim.harness.data import Dataset, load_dataset
from slsim.harness.experiment import ExperimentResult, run_experiment, write_outputs

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "config_from_dict",
    "load_config",
    "load_dataset",
    "run_experiment",
    "write_outputs",
]
