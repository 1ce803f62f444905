"""Supervision and evaluation toolkit for dynamic 4D pointmaps.

Modules: ``geom`` (cameras, pointmaps, flows), ``masks`` (occlusion and
dynamic masks), ``losses`` (static and dynamic alignment objectives),
``synth`` (analytic oracle scenes), ``fit`` (direct pointmap fitting),
``evaluation`` (depth, pose, flow metrics and fusion), ``io`` (file formats)
and ``cli``.
"""

__version__ = "0.1.0"
