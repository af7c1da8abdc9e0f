"""Pseudofermion GP Sampler Logger Utility Functions.

This module provides structured log entries: a decorator logging experiment-level calls
before execution, after execution, and upon exceptions, and solver events recording
rejected proposals and aborted auxiliary-field updates.

Features:
- Logs function arguments, return values, and exceptions; arrays are logged by shape.
- Reports solver failures inside chains at WARNING level.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import dataclasses
import functools
import time
import uuid
from enum import Enum
from logging import Logger
from pathlib import Path
from typing import Any, Callable, Optional, ParamSpec, TypeVar
import numpy as np
from pydantic import BaseModel, Field
from gp_pseudofermion.utils import dump_json


class When(str, Enum):
    """Specifies when logging was performed in the `observe` decorator.

    Attributes:
        BEFORE: Log before the function is called.
        AFTER: Log after the function has returned successfully.
        EXCEPTION: Log when an exception is raised during execution.
    """

    BEFORE = "before"
    AFTER = "after"
    EXCEPTION = "exception"


class Log(BaseModel):
    """Represents a structured log entry for function calls."""

    id: str = Field(
        description="Unique identifier for the log entry.",
    )
    when: When = Field(
        description="Indicates when the log was generated (before, after, or on exception).",
    )
    name: str = Field(
        description="Name of the logged function.",
    )
    args: Optional[tuple] = Field(
        default=None,
        description="Summaries of the positional arguments passed to the function.",
    )
    kwargs: Optional[dict] = Field(
        default=None,
        description="Summaries of the keyword arguments passed to the function.",
    )
    result: Optional[Any] = Field(
        default=None,
        description="Summary of the return value of the function (if applicable).",
    )
    exception: Optional[str] = Field(
        default=None,
        description="Exception raised during function execution (if any).",
    )
    logged_at: int = Field(
        description="Timestamp (epoch time in nanoseconds) when the log was created.",
    )


class SolverEvent(BaseModel):
    """A solver failure absorbed by a chain as a rejection or an aborted update."""

    chain: int = Field(description="The chain index.")
    step: int = Field(description="The outer step at which the failure occurred.")
    stage: str = Field(description="The update that failed (gibbs, leapfrog, implicit, rwm).")
    error: str = Field(description="The error type and message.")
    iterations: Optional[int] = Field(default=None, description="Solver iterations performed.")
    residual: Optional[float] = Field(default=None, description="The final residual reached.")
    theta: list[float] = Field(default_factory=list, description="The hyperparameters at failure.")


def summarize(value: Any) -> Any:
    """Reduces a value to something JSON-serializable, never dumping array contents."""
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, np.ndarray):
        return {"shape": list(value.shape), "dtype": str(value.dtype)}
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [summarize(item) for item in value]
    if isinstance(value, dict):
        return {str(key): summarize(item) for key, item in value.items()}
    if dataclasses.is_dataclass(value):
        return type(value).__name__
    return repr(value)


def report(by: Logger, event: SolverEvent) -> None:
    """Logs a solver event at WARNING level."""
    by.warning(dump_json(event))


# `_Params` represents the parameter types of the function passed to `observe`.
_Params = ParamSpec("_Params")
# `_ReturnType` represents the return type of the function passed to `observe`.
_ReturnType = TypeVar("_ReturnType")


def observe(
    by: Logger,
    args: Optional[list[int]] = None,
    kwargs: Optional[list[str]] = None,
):
    """A decorator for logging function execution details.

    Args:
        by (Logger): The logger instance to be used for logging.
        args (Optional[list[int]]): Indices of positional arguments to log.
            If None, all positional arguments are logged.
        kwargs (Optional[list[str]]): Keys of keyword arguments to log.
            If None, all keyword arguments are logged.

    Returns:
        Callable: A decorated function with logging behavior.
    """

    def decorator(
        func: Callable[_Params, _ReturnType],
    ) -> Callable[_Params, _ReturnType]:
        @functools.wraps(func)
        def wrapper(*_args: _Params.args, **_kwargs: _Params.kwargs):
            id = str(uuid.uuid4())
            logger = by.getChild(func.__name__)
            picked_args = _args if args is None else tuple(_args[i] for i in args if i < len(_args))
            picked_kwargs = _kwargs if kwargs is None else {k: _kwargs[k] for k in kwargs if k in _kwargs}
            before = Log(
                id=id,
                when=When.BEFORE,
                name=func.__name__,
                args=tuple(summarize(arg) for arg in picked_args),
                kwargs=summarize(dict(picked_kwargs)),
                logged_at=time.time_ns(),
            )
            logger.info(dump_json(before))
            try:
                result = func(*_args, **_kwargs)
                after = Log(
                    id=id,
                    when=When.AFTER,
                    name=func.__name__,
                    result=summarize(result),
                    logged_at=time.time_ns(),
                )
                logger.info(dump_json(after))
            except Exception as e:
                exception = Log(
                    id=id,
                    when=When.EXCEPTION,
                    name=func.__name__,
                    exception=f"{type(e).__name__}: {e}",
                    logged_at=time.time_ns(),
                )
                logger.info(dump_json(exception))
                raise e
            return result

        return wrapper

    return decorator
