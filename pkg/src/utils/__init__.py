"""Utility functions and helpers for the reasoning runtime."""

from .logging import configure_logging

from .text import (
    clean_text,
    count_tokens,
    normalize_newlines,
    split_tokens,
    stable_digest,
    token_id,
    tokenize,
)

from .validation import (
    aggregate_reports,
    report_from_error,
    validate_settings,
    validate_url,
)

__all__ = [
    # Logging
    "configure_logging",

    # Text utilities
    "clean_text",
    "count_tokens",
    "normalize_newlines",
    "split_tokens",
    "stable_digest",
    "token_id",
    "tokenize",

    # Validation utilities
    "aggregate_reports",
    "report_from_error",
    "validate_settings",
    "validate_url",
]
