"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI (and callers
that batch many solves) can branch on the failure without parsing messages.
"""

from __future__ import annotations


class ConvBondError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details: object) -> None:
        super().__init__(message or self.code)
        self.details = details


# -- parameter validation -------------------------------------------------


class ValidationError(ConvBondError):
    code = "InvalidParameters"


class NonPositive(ValidationError):
    code = "NonPositive"


class UpperObstacleActive(ValidationError):
    """c >= rK: the call cap becomes an active second obstacle."""

    code = "UpperObstacleActive"


class NoFreeBoundary(ValidationError):
    """c >= qK: conversion is never optimal inside the domain."""

    code = "NoFreeBoundary"


class UnsupportedFeature(ValidationError):
    code = "UnsupportedFeature"


class ConfigError(ValidationError):
    code = "ConfigError"


# -- solver ---------------------------------------------------------------


class SolverError(ConvBondError):
    code = "SolverError"


class NoConvergence(SolverError):
    code = "NoConvergence"


class ObstacleViolation(SolverError):
    code = "ObstacleViolation"


# -- diagnostics ----------------------------------------------------------


class DiagnosticError(ConvBondError):
    code = "DiagnosticError"


class InsufficientResolution(DiagnosticError):
    code = "InsufficientResolution"


class InsufficientSamples(DiagnosticError):
    code = "InsufficientSamples"


class EmptyExerciseRegion(DiagnosticError):
    code = "EmptyExerciseRegion"


class PatchOutOfDomain(DiagnosticError):
    code = "PatchOutOfDomain"


class ProbabilityOutOfRange(ConvBondError):
    code = "ProbabilityOutOfRange"
