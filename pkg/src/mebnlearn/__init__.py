"""Learn Multi-Entity Bayesian Network models from relational databases."""
from importlib.resources import files

__version__ = "0.1.0"


def data_path(*parts: str):
    """Path to a bundled fixture, e.g. ``data_path("threat_full", "manifest.txt")``."""
    return files(__name__).joinpath("data", *parts)
