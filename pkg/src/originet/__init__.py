"""Micro-expression recognition from active images with OrigiNet.

Modules: :mod:`tensor` (layer primitives), :mod:`activations`,
:mod:`active_imaging`, :mod:`model`, :mod:`data`, :mod:`experiment`
and the ``originet`` command line in :mod:`cli`.
"""

__version__ = "0.1.0"
