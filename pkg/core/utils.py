import math

import numpy as np


class Aggregates:
    """Summary statistics over seeds"""

    @staticmethod
    def mean(values):
        values = [v for v in values if not math.isnan(v)]
        return float(np.mean(values)) if values else float("nan")

    @staticmethod
    def std(values):
        """Sample standard deviation; 0.0 for a single value."""
        values = [v for v in values if not math.isnan(v)]
        if not values:
            return float("nan")
        if len(values) == 1:
            return 0.0
        return float(np.std(values, ddof=1))


class CsvFormat:
    """Deterministic text for report cells"""

    DIGITS = 12

    @staticmethod
    def number(value):
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return str(int(value))
        value = float(value)
        if math.isnan(value):
            return "nan"
        return format(value, f".{CsvFormat.DIGITS}g")

    @staticmethod
    def parse(text):
        try:
            return int(text)
        except ValueError:
            pass
        try:
            return float(text)
        except ValueError:
            return text
