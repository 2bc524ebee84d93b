"""Desk-scale laboratory for incremental semi-supervised tuning from
temporal coherence."""

from . import cli, dataio, netcore, rng, runner, strategies, varspace

__all__ = ["cli", "dataio", "netcore", "rng", "runner", "strategies",
           "varspace"]
__version__ = "0.1.0"
