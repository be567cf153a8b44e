"""ICAD - In-context anomaly detection across modalities."""

from importlib.metadata import version, PackageNotFoundError

try:
    __version__ = version("icad")
except PackageNotFoundError:
    # Package not installed (e.g., running from source without pip install -e)
    __version__ = "0.0.0-dev"
