from __future__ import annotations

import logging

from scene_dialog_dmn.logging_filters import _NumericWarningCompactionFilter


def _warning_record(text: str, name: str = "py.warnings") -> logging.LogRecord:
    message = f"/src/scene_dialog_dmn/tensor.py:88: RuntimeWarning: {text}\n  out = np.exp(x)\n"
    return logging.LogRecord(name, logging.WARNING, __file__, 1, "%s", (message,), None)


def test_first_warning_is_compacted():
    compaction = _NumericWarningCompactionFilter(every=3)
    record = _warning_record("overflow encountered in exp")
    assert compaction.filter(record)
    assert record.getMessage() == "Numeric warning: overflow encountered in exp"


def test_repeats_are_suppressed_except_every_nth():
    compaction = _NumericWarningCompactionFilter(every=3)
    kept = [compaction.filter(_warning_record("invalid value encountered in divide")) for _ in range(7)]
    assert kept == [True, False, True, False, False, True, False]

    record = _warning_record("invalid value encountered in divide")
    compaction.counts["invalid value encountered in divide"] = 8
    assert compaction.filter(record)
    assert record.getMessage() == "Numeric warning: invalid value encountered in divide (seen 9 times)"


def test_distinct_messages_counted_separately():
    compaction = _NumericWarningCompactionFilter(every=100)
    assert compaction.filter(_warning_record("overflow encountered in exp"))
    assert compaction.filter(_warning_record("divide by zero encountered in log"))
    assert not compaction.filter(_warning_record("overflow encountered in exp"))


def test_other_records_pass_untouched():
    compaction = _NumericWarningCompactionFilter()
    record = logging.LogRecord("scene_dialog_dmn", logging.INFO, __file__, 1, "Epoch %d", (3,), None)
    assert compaction.filter(record)
    assert record.getMessage() == "Epoch 3"

    plain = logging.LogRecord("py.warnings", logging.WARNING, __file__, 1, "UserWarning: hello", None, None)
    assert compaction.filter(plain)
    assert plain.getMessage() == "UserWarning: hello"
