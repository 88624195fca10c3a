"""squarefield - numerical experiments on conical and vertical square functions."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("squarefield")
except PackageNotFoundError:
    __version__ = "0.1.0"
