"""Grouped selective state-space models for point clouds.

Subpackages split along the pipeline: ``tensor`` (autodiff numerics),
``kernels`` (compiled/pure scan recurrences), ``ssm`` (selective scan core),
``serialization`` (point orderings), ``blocks`` (bidirectional sequence
blocks), ``sampling`` (set abstraction), ``network`` (full encoder/decoder),
``harness`` (training and ablations), ``cli`` (command line entry).
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
