from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


class SolverDivergenceError(RuntimeError):
    """Raised when a saddle-point solve blows up; ``bound`` names the culprit."""

    def __init__(self, bound: str, message: str):
        super().__init__(f"{bound} bound: {message}")
        self.bound = bound


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    point_estimate: float
    alpha: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def widened(self, amount: float) -> "ConfidenceInterval":
        diag = dict(self.diagnostics, widened_by=amount)
        return ConfidenceInterval(self.lower - amount, self.upper + amount,
                                  self.point_estimate, self.alpha, self.method, diag)

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "point": self.point_estimate,
                "alpha": self.alpha, "method": self.method,
                "diagnostics": _jsonable(self.diagnostics)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
