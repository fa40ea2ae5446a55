"""Catalog spectral measures and their JSON form.

A measure is written as ``{"kind": ..., "params": {...}}``; ``affine`` nests its
``base`` measure inside ``params``.  Parsing fills defaults and validates ranges,
so ``AnalyticMeasure.from_json(m.to_json()) == m`` for every valid measure.
"""
import json
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MeasureKind(str, Enum):
    SEMICIRCLE = "semicircle"
    ARCSINE = "arcsine"
    KESTEN_MCKAY = "kesten_mckay"
    BERNOULLI = "bernoulli"
    GAUSSIAN = "gaussian"
    ORTHOPOLY = "orthopoly"
    DIRAC = "dirac"
    AFFINE = "affine"


# parameter name -> default (None means required)
_PARAMETERS: Dict[MeasureKind, Dict[str, Optional[float]]] = {
    MeasureKind.SEMICIRCLE: {"variance": 1.0},
    MeasureKind.ARCSINE: {},
    MeasureKind.KESTEN_MCKAY: {"eta": None},
    MeasureKind.BERNOULLI: {},
    MeasureKind.GAUSSIAN: {"sigma": 1.0},
    MeasureKind.ORTHOPOLY: {"a": None, "b": None},
    MeasureKind.DIRAC: {"c": 0.0},
    MeasureKind.AFFINE: {"scale": None, "shift": 0.0, "base": None},
}


class MeasureParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variance: Optional[float] = None
    eta: Optional[float] = None
    sigma: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    c: Optional[float] = None
    scale: Optional[float] = None
    shift: Optional[float] = None
    base: Optional["AnalyticMeasure"] = None


class AnalyticMeasure(BaseModel):
    """A catalog entry: compactly supported (or truncated Gaussian) spectral measure"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: MeasureKind
    params: MeasureParams = Field(default_factory=lambda: MeasureParams())

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "kind" not in data:
            return data
        kind = MeasureKind(data["kind"])
        params = data.get("params") or {}
        if isinstance(params, MeasureParams):
            params = {k: v for k, v in params if v is not None}
        params = dict(params)
        allowed = _PARAMETERS[kind]
        unknown = set(params) - set(allowed)
        if unknown:
            raise ValueError(f"{kind.value} does not take parameters {sorted(unknown)}")
        for name, default in allowed.items():
            if params.get(name) is None:
                if default is None and name != "base":
                    raise ValueError(f"{kind.value} requires parameter '{name}'")
                if default is not None:
                    params[name] = default
        return {"kind": kind, "params": params}

    @model_validator(mode="after")
    def _check_ranges(self) -> "AnalyticMeasure":
        p = self.params
        if self.kind == MeasureKind.SEMICIRCLE and not p.variance > 0:
            raise ValueError("semicircle variance must be > 0")
        if self.kind == MeasureKind.KESTEN_MCKAY and not p.eta >= 2:
            raise ValueError("kesten_mckay eta must be >= 2")
        if self.kind == MeasureKind.GAUSSIAN and not p.sigma > 0:
            raise ValueError("gaussian sigma must be > 0")
        if self.kind == MeasureKind.ORTHOPOLY and not p.b > 0:
            raise ValueError("orthopoly b must be > 0")
        if self.kind == MeasureKind.AFFINE:
            if p.base is None:
                raise ValueError("affine requires parameter 'base'")
            if p.scale == 0:
                raise ValueError("affine scale must be non-zero")
        return self

    # Constructors

    @classmethod
    def semicircle(cls, variance: float = 1.0) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.SEMICIRCLE, params={"variance": variance})

    @classmethod
    def arcsine(cls) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.ARCSINE)

    @classmethod
    def kesten_mckay(cls, eta: float) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.KESTEN_MCKAY, params={"eta": eta})

    @classmethod
    def bernoulli(cls) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.BERNOULLI)

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.GAUSSIAN, params={"sigma": sigma})

    @classmethod
    def orthopoly(cls, a: float, b: float) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.ORTHOPOLY, params={"a": a, "b": b})

    @classmethod
    def dirac(cls, c: float = 0.0) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.DIRAC, params={"c": c})

    @classmethod
    def affine(cls, base: "AnalyticMeasure", scale: float, shift: float = 0.0) -> "AnalyticMeasure":
        return cls(kind=MeasureKind.AFFINE, params={"scale": scale, "shift": shift, "base": base})

    # JSON

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AnalyticMeasure":
        return cls.model_validate(json.loads(text))

    @classmethod
    def from_file(cls, path: str) -> "AnalyticMeasure":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json(handle.read())

    @property
    def is_atomic(self) -> bool:
        if self.kind == MeasureKind.AFFINE:
            return self.params.base.is_atomic
        return self.kind in (MeasureKind.BERNOULLI, MeasureKind.DIRAC)

    def __str__(self) -> str:
        return self.to_json()


MeasureParams.model_rebuild()
