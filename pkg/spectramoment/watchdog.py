from typing import List, Optional, Sequence
import logging

logging.basicConfig(level=logging.INFO)


class SolverError(Exception):
    def __init__(self, message: str, residual_history: Optional[Sequence[float]] = None):
        """Base class of the estimation failures. Every solver error carries the residual
        history recorded up to the failure, so that a caller (or the CLI report) can
        show how far the iteration got.
        """
        super().__init__(message)
        self.residual_history: List[float] = list(residual_history or [])


class InfeasibleSigmaError(SolverError):
    pass


class LineSearchCollapseError(SolverError):
    pass


class MaxItersExceededError(SolverError):
    pass


class ConvergenceWatchdog:
    def __init__(
        self,
        tol_residual: float,
        max_iters: int,
        report_every_n_steps: int = 10,
        abort: Optional[bool] = True,
    ) -> None:
        """The ConvergenceWatchdog supervises a Newton iteration. The solver informs it
        of the residual after every step; the watchdog records the history, reports
        progress and decides when the iteration has converged. When the iteration budget
        is exhausted it either aborts the solve or only warns.

        Args:
            tol_residual (float): The absolute residual at which the iteration counts as
            converged. Must be a positive float.
            max_iters (int): The iteration budget. Must be a positive integer.
            report_every_n_steps (int, optional): Outputs the residual to STDERR every n
            iterations. Defaults to 10.
            abort (Optional[bool], optional): Whether to raise MaxItersExceededError
            when the budget is exhausted. If False, a warning is logged and the solver
            returns its last iterate flagged as not converged. Defaults to True.
        """
        self.tol_residual = tol_residual
        if self.tol_residual is None or (not self.tol_residual > 0.0):  # type: ignore
            raise ValueError("The residual tolerance must be a positive float.")
        self.max_iters = max_iters
        if self.max_iters is None or (not self.max_iters >= 1):  # type: ignore
            raise ValueError("The iteration budget must be a positive integer.")
        self.report_every_n_steps = report_every_n_steps
        if not self.report_every_n_steps >= 1:
            raise ValueError("report_every_n_steps must be a positive integer.")
        self.abort = abort
        self.residual_history: List[float] = []

    def reset(self) -> None:
        self.residual_history = []

    @property
    def iterations(self) -> int:
        return max(len(self.residual_history) - 1, 0)

    def converged(self) -> bool:
        return bool(self.residual_history) and (
            self.residual_history[-1] <= self.tol_residual
        )

    def inform(self, iteration: int, residual: float) -> bool:
        """Record the residual reached after `iteration` Newton steps and return
        whether the iteration may stop (converged or, without abort, out of budget)."""
        self.residual_history.append(float(residual))
        if iteration % self.report_every_n_steps == 0:
            logging.info(f"Residual at {iteration} iterations: {residual:.3e}")

        if self.converged():
            return True
        if iteration >= self.max_iters:
            if self.abort:
                self.abort_solve()
            else:
                logging.warning(
                    f"Iteration budget exhausted. Residual is {residual:.3e}, tolerance"
                    f" is {self.tol_residual:.3e} after {iteration} iterations."
                )
            return True
        return False

    def abort_solve(self) -> None:
        last = self.residual_history[-1] if self.residual_history else float("nan")
        raise MaxItersExceededError(
            f"Iteration budget of {self.max_iters} exhausted. Residual is {last:.3e},"
            f" tolerance is {self.tol_residual:.3e}.",
            self.residual_history,
        )
