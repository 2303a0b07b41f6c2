"""Correspondence-map hallucination on synthetic scenes.

Modules: ``geometry`` (camera and pose algebra), ``corrmap`` (maps and the
NRE), ``synth`` (procedural pairs), ``autodiff`` (differentiable ops and
gradient checks), ``net`` (the toy network), ``train``, ``pose`` (MSAC and
GNC on correspondence maps), ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
