"""visrel: spatial-relation prediction from images on a synthetic tabletop.

The package bundles a small numpy-backed autodiff core (:mod:`visrel.nn`),
a synthetic block-scene generator with geometric predicate labels
(:mod:`visrel.scene`), a view-conditioned transformer encoder
(:mod:`visrel.model`), predicate / direction readout heads
(:mod:`visrel.heads`), training loops (:mod:`visrel.train`), evaluation
protocols (:mod:`visrel.metrics`, :mod:`visrel.protocols`) and a symbolic
task planner (:mod:`visrel.planner`), tied together by the ``visrel`` CLI.
"""

__version__ = "0.1.0"
