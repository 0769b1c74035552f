from .config import ExperimentConfig, load_config
