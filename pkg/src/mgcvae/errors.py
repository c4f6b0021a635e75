"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MGCVAEError(Exception):
    """Base class for all package errors."""


# -- SMILES --------------------------------------------------------------------


class SmilesError(MGCVAEError, ValueError):
    """Base class for SMILES parsing failures."""

    def __init__(self, message: str, text: str = "", position: int | None = None):
        self.text = text
        self.position = position
        if position is not None:
            message = f"{message} at position {position} in {text!r}"
        super().__init__(message)


class RejectedFeature(SmilesError):
    """The input uses a SMILES feature that is deliberately not supported.

    ``feature`` is one of ``charge``, ``fragment``, ``bracket``, ``stereo``.
    """

    def __init__(self, feature: str, text: str = "", position: int | None = None):
        self.feature = feature
        super().__init__(f"unsupported SMILES feature ({feature})", text, position)


class SmilesSyntaxError(SmilesError):
    """Malformed SMILES: unbalanced branches, unpaired ring closures, stray bonds."""


class UnsupportedElement(SmilesError):
    """Element outside the 12-symbol whitelist."""


# -- graphs --------------------------------------------------------------------


class InvalidGraph(MGCVAEError, ValueError):
    """A MolGraph failed validation where a valid one is required."""

    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class SizeOverflow(MGCVAEError, ValueError):
    """Molecule has more atoms than the matrix schema allows."""


# -- properties ----------------------------------------------------------------


class InvalidProperty(MGCVAEError, ValueError):
    """Non-finite property value."""


class TableError(MGCVAEError, ValueError):
    """Malformed contribution table file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# -- dataset -------------------------------------------------------------------


class DataError(MGCVAEError):
    """Base class for dataset problems (CLI exit code 2)."""


class LineError(DataError, ValueError):
    """Malformed input line."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaError(DataError):
    """Cache and manifest (or checkpoint) disagree about the matrix schema."""


class ChecksumError(DataError):
    """Corrupt checkpoint or cache file."""


class EmptyInput(DataError, ValueError):
    """An evaluation was asked to summarise zero molecules."""


# -- numerics / model ----------------------------------------------------------


class ShapeError(MGCVAEError, ValueError):
    """Array shapes are incompatible."""


class TapeError(MGCVAEError, RuntimeError):
    """Backward pass requested on a tape whose parameters have since changed."""


class NonFiniteGradient(MGCVAEError, FloatingPointError):
    """A gradient contained NaN or inf; training cannot continue."""

    def __init__(self, message: str, batch_index: int | None = None):
        self.batch_index = batch_index
        super().__init__(message)


class ConditionError(MGCVAEError, ValueError):
    """Condition vector supplied to an unconditional model, or vice versa."""
