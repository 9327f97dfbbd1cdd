from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidInputError

PRIOR_VARIANTS = ("noninformative", "equal_volume")
CHAINS = ("continuous", "discrete")
LIKELIHOODS = ("robust_t", "gaussian")

# file/CLI spellings that differ from attribute names
_ALIASES = {"lambda": "lam", "kmax": "K_max", "harmonics": "H", "prior": "prior_variant"}


@dataclass(frozen=True)
class RunConfig:
    """Model and fitting settings shared by detection, Gibbs sampling and the CLI.

    Defaults follow the case-study configuration: six segments at most, two
    harmonics with trend and interannual contrasts, t errors with three
    degrees of freedom, trend precision 5 and contrast decay 1.
    """

    K_max: int = 6
    H: int = 2
    nu: float = 3.0
    likelihood: str = "robust_t"
    trend: bool = True
    contrasts: bool = True
    beta_precision: float = 5.0
    psi: float = 1.0
    lam: float = 1.0
    prior_variant: str = "noninformative"
    chain: str = "continuous"
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.K_max < 1:
            raise InvalidInputError("K_max must be >= 1")
        if self.H < 0:
            raise InvalidInputError("H must be >= 0")
        if self.contrasts and self.H < 2:
            raise InvalidInputError("contrasts need H >= 2 (use --no-contrasts)")
        if self.prior_variant not in PRIOR_VARIANTS:
            raise InvalidInputError(f"prior_variant must be one of {PRIOR_VARIANTS}")
        if self.chain not in CHAINS:
            raise InvalidInputError(f"chain must be one of {CHAINS}")
        if self.likelihood not in LIKELIHOODS:
            raise InvalidInputError(f"likelihood must be one of {LIKELIHOODS}")
        if not self.nu > 0:
            raise InvalidInputError("nu must be positive")
        if not (self.tol > 0 and self.max_iter >= 1):
            raise InvalidInputError("tol must be positive and max_iter >= 1")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, value in data.items():
            key = _ALIASES.get(key, key).replace("-", "_")
            if key not in names:
                raise InvalidInputError(f"unknown config key {key!r}")
            kw[key] = value
        if "prior_variant" in kw:
            kw["prior_variant"] = str(kw["prior_variant"]).replace("-", "_")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a flat JSON object of settings."""
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("config file must hold a flat JSON object")
        return cls.from_mapping(data)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
