"""Outage analysis of flow-optimized cooperative relaying."""
from importlib.metadata import PackageNotFoundError, version


__all__ = ['__version__']


try:
    __version__ = version('relayflow')
except PackageNotFoundError:
    __version__ = '(unknown)'
