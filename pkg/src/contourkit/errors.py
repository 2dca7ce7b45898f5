"""Exception taxonomy shared across the package.

ValueError is used for bad arguments to library functions; the classes here
cover failures the CLI maps to distinct exit codes.
"""


class DataError(Exception):
    """A file or corpus is missing, truncated, or malformed (CLI exit 2)."""


class CorpusError(DataError):
    """Per-image problems found while scanning a corpus."""

    def __init__(self, problems):
        self.problems = list(problems)  # (image_id, message) pairs
        lines = "; ".join(f"{img}: {msg}" for img, msg in self.problems)
        super().__init__(f"corpus errors: {lines}")


class InternalError(Exception):
    """An internal invariant was violated (CLI exit 3)."""
