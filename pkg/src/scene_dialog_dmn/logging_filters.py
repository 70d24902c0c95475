from __future__ import annotations

import logging
import re
import warnings

_RUNTIME_WARNING_RE = re.compile(r"RuntimeWarning: (?P<text>[^\n]+)")


class _NumericWarningCompactionFilter(logging.Filter):
    """
    Collapse numpy RuntimeWarnings (overflow, invalid value, divide by zero).

    Routed through `logging.captureWarnings`, each warning arrives as a
    multi-line record carrying the file, line and source text. Keep one short
    line per distinct message, then only every `every`-th repeat with a count.
    """

    def __init__(self, every: int = 100) -> None:
        super().__init__()
        self.every = max(every, 1)
        self.counts: dict[str, int] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        if record.name != "py.warnings":
            return True
        message = record.getMessage()
        match = _RUNTIME_WARNING_RE.search(message)
        if match is None:
            return True

        text = match.group("text").strip()
        seen = self.counts.get(text, 0) + 1
        self.counts[text] = seen
        if seen != 1 and seen % self.every != 0:
            return False

        record.levelno = logging.WARNING
        record.levelname = logging.getLevelName(logging.WARNING)
        record.exc_info = None
        record.exc_text = None
        if seen == 1:
            record.msg = "Numeric warning: %s"
            record.args = (text,)
        else:
            record.msg = "Numeric warning: %s (seen %d times)"
            record.args = (text, seen)
        return True


def install_numeric_warning_compaction(every: int = 100) -> logging.Filter:
    logging.captureWarnings(True)
    warnings.simplefilter("always", RuntimeWarning)
    compaction = _NumericWarningCompactionFilter(every)
    logging.getLogger("py.warnings").addFilter(compaction)
    return compaction
