import numpy as np
from scipy import linalg
from typing import Callable, Type

from .numerics import spectral_radius

STABILITY_MARGIN = 1e-8
RANK_TOL = 1e-9


class BadFilterBankError(Exception):
    """Informs the user that the filter bank (A, B) violates a standing assumption."""

    pass


class NotSchurStableError(BadFilterBankError):
    pass


class RankDeficientBError(BadFilterBankError):
    pass


class UnreachablePairError(BadFilterBankError):
    pass


class FilterBankSnooper:
    def __init__(self) -> None:
        """The FilterBankSnooper checks a pair (A, B) for the three standing assumptions
        of the moment problem before any G(z) is ever evaluated:
        - A is Schur stable with a margin, i.e. its spectral radius is at most 1 - 1e-8.
        - B has full column rank (smallest singular value above 1e-10 times the largest).
        - (A, B) is reachable: the reachability matrix [B, AB, ..., A^(n-1)B] has rank n
        (SVD rank with tolerance 1e-9 * sigma_max).
        """
        self.validators = [
            Validator(
                "Schur Stable",
                schur_stable,
                "A must be Schur stable with spectral radius at most 1 - 1e-8. ",
                NotSchurStableError,
            ),
            Validator(
                "B Full Column Rank",
                full_column_rank,
                "B must have full column rank. ",
                RankDeficientBError,
            ),
            Validator(
                "Reachable Pair",
                reachable,
                "The pair (A, B) must be reachable.",
                UnreachablePairError,
            ),
        ]

    def snoop(self, A: np.ndarray, B: np.ndarray) -> None:
        msg = ""
        error: Type[BadFilterBankError] = BadFilterBankError
        for validator in reversed(self.validators):
            failure = validator.validate(A, B)
            if failure != "":
                msg = failure + msg
                error = validator.error
        if msg != "":
            raise error(msg)


class Validator:
    def __init__(
        self,
        name: str,
        val_func: Callable,
        message: str,
        error: Type[BadFilterBankError],
    ) -> None:
        """Private class for use in the FilterBankSnooper. Takes a validator function
        and applies it to the pair (A, B). If the function fails, it returns an
        exception message for the user.

        Args:
            name (str): Human-readable description. Not used elsewhere.
            val_func (Callable): The function which validates the pair. Should
            return False if it fails.
            message (str): The error message which is passed to the FilterBankSnooper
            to be shown to the user.
            error (Type[BadFilterBankError]): The exception raised when this validator
            is the first one to fail.
        """
        self.name = name
        self.val_func = val_func
        self.message = message
        self.error = error

    def validate(self, A: np.ndarray, B: np.ndarray) -> str:
        if not self.val_func(A, B):
            return self.message
        return ""


def schur_stable(A: np.ndarray, B: np.ndarray) -> bool:
    return spectral_radius(A) <= 1.0 - STABILITY_MARGIN


def full_column_rank(A: np.ndarray, B: np.ndarray) -> bool:
    s = linalg.svdvals(B)
    return bool(s.size == B.shape[1] and s[0] > 0.0 and s[-1] > 1e-10 * s[0])


def reachable(A: np.ndarray, B: np.ndarray) -> bool:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    s = linalg.svdvals(np.hstack(blocks))
    if s.size == 0 or s[0] == 0.0:
        return False
    return int(np.sum(s > RANK_TOL * s[0])) == n
