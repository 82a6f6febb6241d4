"""Variational inference over permutation matrices via Birkhoff polytope relaxations."""
from .errors import (
    DegenerateBound,
    DimensionMismatch,
    DimensionTooLarge,
    InfeasibleMatching,
    NonPositiveEntry,
    ParseError,
    ValidationError,
)
from .perm_core import (
    PosteriorHistogram,
    bhattacharyya,
    bhattacharyya_hellinger,
    enumerate_permutations,
    hungarian,
    round_to_permutation,
    sinkhorn_knopp,
)
from .transforms import RoundingParams, StickBreakingParams

__version__ = "0.1.0"
