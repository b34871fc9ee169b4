"""
Error handling utilities for IsoFormer.

This module maps exceptions to the documented process exit codes and
provides consistent logging for commands and services.
"""

import logging
from typing import Any, Dict, Optional

from pydantic import ValidationError

from ..exceptions import (
    EXIT_DATA,
    EXIT_INTERNAL,
    EXIT_IO,
    EXIT_USAGE,
    IsoFormerError,
    NonFiniteLoss,
)


class ErrorHandler:
    """
    Centralized error handling for consistent exit codes.

    Commands delegate every escaping exception to :meth:`handle`, which logs
    it once and returns the exit code the process should terminate with.
    """

    def __init__(self, logger_name: str = "isoformer"):
        """
        Initialize the error handler.

        Args:
            logger_name: Name for the logger instance
        """
        self.logger = logging.getLogger(logger_name)

    def handle(self, error: BaseException, context: str = "command") -> int:
        """
        Log an exception and translate it into an exit code.

        Args:
            error: The exception that escaped a command
            context: Name of the command or stage that failed

        Returns:
            int: Process exit code
        """
        if isinstance(error, NonFiniteLoss):
            return self.handle_training_error(error, context)
        if isinstance(error, IsoFormerError):
            if error.exit_code == EXIT_USAGE:
                return self.handle_usage_error(error, context)
            if error.exit_code == EXIT_IO:
                return self.handle_io_error(error, context)
            return self.handle_data_error(error, context)
        if isinstance(error, ValidationError):
            return self.handle_usage_error(error, context)
        if isinstance(error, OSError):
            return self.handle_io_error(error, context)

        self.logger.exception(f"Unexpected error in {context}: {error}")
        return EXIT_INTERNAL

    def handle_usage_error(self, error: BaseException, context: str = "command") -> int:
        """
        Handle usage and configuration errors.

        Args:
            error: The usage exception
            context: Command that rejected its arguments

        Returns:
            int: Exit code 1
        """
        self.logger.error(f"Usage error in {context}: {error}")
        return EXIT_USAGE

    def handle_data_error(self, error: BaseException, context: str = "command") -> int:
        """
        Handle data, parse, shape and checkpoint errors.

        Args:
            error: The data exception
            context: Command or stage that failed

        Returns:
            int: Exit code carried by the error (2 for plain data errors)
        """
        self.logger.error(f"Data error in {context}: {error}")
        return getattr(error, "exit_code", EXIT_DATA)

    def handle_io_error(self, error: BaseException, context: str = "command") -> int:
        """
        Handle filesystem failures.

        Args:
            error: The IO exception
            context: Command or stage that failed

        Returns:
            int: Exit code 3
        """
        self.logger.error(f"IO error in {context}: {error}")
        return EXIT_IO

    def handle_training_error(self, error: NonFiniteLoss, context: str = "train") -> int:
        """
        Handle a diverged optimisation run.

        Args:
            error: The non-finite loss exception with its diagnostics
            context: Command that was training

        Returns:
            int: Exit code 4
        """
        self.logger.error(f"Training aborted in {context}: {error}")
        return error.exit_code

    def log_info(self, message: str, **kwargs) -> None:
        """
        Log informational messages with context.

        Args:
            message: The message to log
            **kwargs: Additional context information
        """
        if kwargs:
            message = f"{message} - Context: {kwargs}"
        self.logger.info(message)

    def log_warning(self, message: str, **kwargs) -> None:
        """
        Log warning messages with context.

        Args:
            message: The warning message
            **kwargs: Additional context information
        """
        if kwargs:
            message = f"{message} - Context: {kwargs}"
        self.logger.warning(message)

    def create_error_report(self,
                            exit_code: int,
                            message: str,
                            details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Create a standardized error record for run manifests.

        Args:
            exit_code: Process exit code
            message: Error message
            details: Optional additional details

        Returns:
            Dict containing the error record
        """
        report = {
            "error": True,
            "exit_code": exit_code,
            "message": message
        }

        if details:
            report["details"] = details

        return report
