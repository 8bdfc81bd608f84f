"""Test reports and the per-sample work pool shared by the latent tests."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

TESTS = ("ILR", "LLR-full", "LLR-partial")


@dataclass
class TestReport:
    """Posterior-expected p-value of one latent test on one chain.

    ``p_values`` holds the per-sample values whose mean is ``E_hat_p``;
    ``log_T`` and ``log_T_prime`` are filled for the likelihood-ratio tests
    (one ``log_T_prime`` row per sample, one column per draw).
    """

    __test__ = False  # not a pytest class

    test: str
    E_hat_p: float
    n_samples: int
    dataset: str = ""
    M0: str = ""
    M1: str = ""
    window: float = 1.0
    seed: int | None = None
    n_dropped: int = 0
    p_values: list = field(default_factory=list)
    log_T: list = field(default_factory=list)
    log_T_prime: list = field(default_factory=list)

    def __post_init__(self):
        if self.test not in TESTS:
            raise ValueError(f"unknown test {self.test!r}")
        if self.n_samples <= 0:
            raise ValueError("a report needs at least one usable sample")
        if not 0.0 <= self.E_hat_p <= 1.0:
            raise ValueError("E_hat_p must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_values"] = [float(v) for v in self.p_values]
        d["log_T"] = [_finite_or_none(v) for v in self.log_T]
        d["log_T_prime"] = [[_finite_or_none(v) for v in row] for row in self.log_T_prime]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        d = dict(d)
        nan = lambda v: math.nan if v is None else v
        d["log_T"] = [nan(v) for v in d.get("log_T", [])]
        d["log_T_prime"] = [[nan(v) for v in row] for row in d.get("log_T_prime", [])]
        return cls(**d)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "TestReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


def sample_rngs(rng, n: int) -> list:
    """Independent generators, one per retained sample, so results do not depend on the worker count."""
    rng = np.random.default_rng(rng)
    return rng.spawn(n)


def pool_map(fn, items, threads: int = 1) -> list:
    """Ordered map over ``items``, optionally on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
