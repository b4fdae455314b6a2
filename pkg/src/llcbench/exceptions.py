#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from typing import Dict, Optional, Type


__all__ = [
    "LLCBenchError",
    "ConfigurationError",
    "NumericError",
    "SolverError",
    "FormatError",
    "ConsistencyError",
    "TruncatedFileError",
    "InsufficientSamplesError",
    "DivergenceError",
    "StatisticsError",
    "EXIT_CODE_ERROR_MAPPING",
    "EXIT_CODE_OK",
    "exit_code_for"
]


class LLCBenchError(Exception):
    """LLCBench Error"""


class ConfigurationError(LLCBenchError):
    """A configuration value, an architecture or a batch shape is invalid. The message names the offending field."""


class NumericError(LLCBenchError):
    """A computation produced a non-finite value (`NaN` or `Inf`).

    The attribute `index` holds the first offending coordinate (or probe/chain index) when known."""

    def __init__(self, message: str, index: Optional[int] = None) -> None:
        super(NumericError, self).__init__(message)
        self.index = index


class SolverError(LLCBenchError):
    """The conjugate gradient solver did not reach the requested relative residual within its iteration budget."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0) -> None:
        super(SolverError, self).__init__(message)
        self.residual = residual
        self.iterations = iterations


class FormatError(LLCBenchError):
    """An IDX file does not start with the expected big-endian magic number."""


class ConsistencyError(LLCBenchError):
    """An IDX images file and its labels file disagree on the number of items."""


class TruncatedFileError(LLCBenchError, OSError):
    """An IDX file ends before the number of bytes announced by its header."""


class InsufficientSamplesError(LLCBenchError):
    """A volume bin holds fewer hits than needed for a stable log-volume estimate. Widen the box or raise `samples`."""


class DivergenceError(LLCBenchError):
    """More than half of the SGLD chains left the divergence radius or produced a non-finite loss."""


class StatisticsError(LLCBenchError):
    """Not enough replicates to compute the requested statistic (at least two seeds are needed)."""


EXIT_CODE_OK: int = 0
"""Exit code of a successful CLI invocation."""

EXIT_CODE_ERROR_MAPPING: Dict[Type[BaseException], int] = {
    ConfigurationError: 2,
    FormatError: 2,
    ConsistencyError: 2,
    TruncatedFileError: 2,
    InsufficientSamplesError: 2,
    StatisticsError: 2,
    NumericError: 3,
    SolverError: 3,
    DivergenceError: 3,
    OSError: 2,
}
"""CLI exit codes: `2` for configuration and input errors (unreadable or unwritable files included), `3` for numeric
or solver failures."""


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception onto a CLI exit code.

    Parameters
    ----------
    error : BaseException
        The raised exception.

    Returns
    -------
    int : The exit code registered for the most specific matching class in `EXIT_CODE_ERROR_MAPPING`, `1` otherwise.
    """
    for cls in type(error).__mro__:
        if cls in EXIT_CODE_ERROR_MAPPING:
            return EXIT_CODE_ERROR_MAPPING[cls]
    return 1
