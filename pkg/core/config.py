import json
import os
from functools import lru_cache

CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'config.json')

# Used when config.json is missing a key.
BUILTIN_DEFAULTS = {
    'resolution_mm': 5.0,
    'keypoint_count': 3,
    'auc_max_mm': 100.0,
    'accuracy_fraction': 0.10,
    'vote_sample': 400,
    'trials': 20,
    'seed': 0,
    'timing_repeats': 5,
    'perturbation_mm': 1.5,
    'noise_profile': 'calibrated',
    'max_grid_mb': 2048,
    'model_points': 6000,
}


@lru_cache(maxsize=1)
def read_config():
    with open(CONFIG_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)


def get_defaults():
    """Experiment defaults, config.json values layered over the built-ins."""
    defaults = dict(BUILTIN_DEFAULTS)
    defaults.update(read_config().get('defaults', {}))
    return defaults


def get_noise_profile(name):
    profiles = read_config().get('noise_profiles', {})
    if name not in profiles:
        raise KeyError(f"Unknown noise profile '{name}', expected one of {sorted(profiles)}")
    return profiles[name]


def project_version():
    config = read_config()
    return f"{config.get('project_name', 'radvote')} {config.get('version', '0')}"
