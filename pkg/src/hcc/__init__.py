"""Toolkit for diagnosing and cutting post-conclusion continuation in
answer-correct long chain-of-thought traces.

Submodules: ``corpus`` (data model and file formats), ``uncertainty`` and
``geometry`` (per-sentence diagnostics), ``stats`` (paired bootstrap
comparisons, ECDFs, consistency rates), ``model``/``training``/``checkpoint``
(the learned boundary proxy), ``cutter`` (boundary application and SFT
export), ``synth`` (planted-boundary corpora), ``report`` (tables and
figures), and ``cli``.
"""

__version__ = "0.1.0"
