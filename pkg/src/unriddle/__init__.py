"""Concept inference for image riddles with probabilistic soft logic.

Detections from four images are linked through a knowledge base and a
two-stage hinge-loss MRF to the single concept that best explains them.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, InfeasibleError, OutOfVocabularyError,  # noqa: F401
                     RiddleFormatError, UnriddleError)
from .hlmrf import HingeTerm, HlMrfProblem, LinearConstraint, solve  # noqa: F401
from .kgraph import KnowledgeStore  # noqa: F401
from .rules import SeedSet, ThetaConfig  # noqa: F401
