"""Observation-guided report generation at desk scale.

Pipeline: mine an observation graph from a labeled corpus (PMI n-grams),
train an observation planner and a graph-guided generator with tree
reasoning, decode with beam search, and score text overlap plus
observation consistency.
"""

__version__ = "0.1.0"

from .kernels import NUMBA_ACTIVE  # noqa: F401
