"""Probability distributions, seeded random streams and the unit mapping.

Every draw consumes exactly one uniform variate from its stream and maps it
through the inverse CDF of the requested distribution, so a stream's position
always equals the number of draws taken from it, whatever the kind.

Streams are backed by NumPy's ``Philox`` bit generator (Philox-4x64-10, a
counter-based generator).  Keys are derived from ``(seed, name)`` with
BLAKE2b, which makes splitting a stream by a stable name reproducible across
processes and platforms.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .expr import format_number

__all__ = [
    "DISTRIBUTIONS",
    "DistributionSpec",
    "InvalidParameters",
    "RandomStream",
    "format_dist",
    "parse_dist",
    "sample",
    "sample_array",
    "to_unit",
    "unit_likelihood",
    "unit_likelihood_array",
]

GENERATOR_NAME = "philox4x64-10/blake2b-key/v1"

# Ordered as the evaluation tables list them; defaults are normative.
DISTRIBUTIONS: dict[str, tuple[tuple[str, float], ...]] = {
    "normal": (("mu", 0.5), ("sigma", 0.15)),
    "binomial": (("n", 10), ("p", 0.5)),
    "bernoulli": (("p", 0.5),),
    "exponential": (("lambda", 2.0),),
    "gamma": (("k", 2.0), ("theta", 0.25)),
    "poisson": (("lambda", 3.0),),
    "uniform": (("min", 0.0), ("max", 1.0)),
    "geometric": (("p", 0.5),),
    "triangular": (("a", 0.0), ("c", 0.5), ("b", 1.0)),
    "logarithmic": (("p", 0.5),),
}

_INTEGER_PARAMS = {("binomial", "n")}

# Poisson draws above this count saturate the unit mapping.
POISSON_CAP = 10


class InvalidParameters(ValueError):
    """Raised when a distribution is given parameters outside its domain."""


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if self.kind not in DISTRIBUTIONS:
            raise InvalidParameters(f"unknown distribution {self.kind!r}")
        expected = [name for name, _ in DISTRIBUTIONS[self.kind]]
        if [name for name, _ in self.params] != expected:
            raise InvalidParameters(
                f"{self.kind} takes parameters {', '.join(expected)}"
            )
        _check_domain(self.kind, dict(self.params))

    @classmethod
    def of(cls, kind: str, **overrides: float) -> DistributionSpec:
        """Build a spec from defaults, overriding by parameter name.

        ``lambda`` is a keyword in Python, so ``lambda_`` is accepted too.
        """
        kind = kind.lower()
        if kind not in DISTRIBUTIONS:
            raise InvalidParameters(f"unknown distribution {kind!r}")
        overrides = {k.rstrip("_"): v for k, v in overrides.items()}
        names = {name for name, _ in DISTRIBUTIONS[kind]}
        unknown = set(overrides) - names
        if unknown:
            raise InvalidParameters(
                f"{kind} has no parameter(s) {', '.join(sorted(unknown))}"
            )
        params = []
        for name, default in DISTRIBUTIONS[kind]:
            value = overrides.get(name, default)
            if (kind, name) in _INTEGER_PARAMS:
                if float(value) != int(value):
                    raise InvalidParameters(f"{kind}.{name} must be an integer")
                value = int(value)
            else:
                value = float(value)
            params.append((name, value))
        return cls(kind, tuple(params))

    def __getitem__(self, name: str) -> float:
        for key, value in self.params:
            if key == name:
                return value
        raise KeyError(name)

    def __str__(self) -> str:
        return format_dist(self)


def _check_domain(kind: str, p: dict[str, float]) -> None:
    def bad(msg: str) -> InvalidParameters:
        return InvalidParameters(f"{kind}: {msg}")

    for name, value in p.items():
        if not math.isfinite(value):
            raise bad(f"{name} must be finite")
    if kind == "normal" and not p["sigma"] > 0:
        raise bad("sigma must be > 0")
    if kind == "binomial":
        if p["n"] < 1:
            raise bad("n must be >= 1")
        if not 0 <= p["p"] <= 1:
            raise bad("p must be in [0, 1]")
    if kind == "bernoulli" and not 0 <= p["p"] <= 1:
        raise bad("p must be in [0, 1]")
    if kind in ("exponential", "poisson") and not p["lambda"] > 0:
        raise bad("lambda must be > 0")
    if kind == "gamma" and not (p["k"] > 0 and p["theta"] > 0):
        raise bad("k and theta must be > 0")
    if kind == "uniform" and not p["min"] < p["max"]:
        raise bad("min must be < max")
    if kind == "geometric" and not 0 < p["p"] <= 1:
        raise bad("p must be in (0, 1]")
    if kind == "triangular" and not (p["a"] <= p["c"] <= p["b"] and p["a"] < p["b"]):
        raise bad("need a <= c <= b and a < b")
    if kind == "logarithmic" and not 0 < p["p"] < 1:
        raise bad("p must be in (0, 1)")


def format_dist(spec: DistributionSpec) -> str:
    args = ", ".join(f"{k}={format_number(v)}" for k, v in spec.params)
    return f"{spec.kind}({args})"


_DIST_RE = re.compile(r"^\s*([A-Za-z]+)\s*(?:\((.*)\))?\s*$")


def parse_dist(text: str) -> DistributionSpec:
    """Parse ``kind`` or ``kind(name=value, ...)`` as used by the CLI."""
    match = _DIST_RE.match(text)
    if not match:
        raise InvalidParameters(f"cannot parse distribution {text!r}")
    kind, body = match.group(1).lower(), match.group(2)
    overrides: dict[str, float] = {}
    if body and body.strip():
        for part in body.split(","):
            if "=" not in part:
                raise InvalidParameters(f"expected name=value, got {part.strip()!r}")
            name, value = (s.strip() for s in part.split("=", 1))
            try:
                overrides[name] = float(value)
            except ValueError:
                raise InvalidParameters(f"{name}: {value!r} is not a number") from None
    return DistributionSpec.of(kind, **overrides)


_TINY = 2.0**-54


def _derive_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(
        f"{int(seed)}\x00{name}".encode(), digest_size=16
    ).digest()
    return int.from_bytes(digest, "little")


class RandomStream:
    """A named, seeded stream of uniform variates.

    ``split`` derives a child stream from the same seed and a longer name; the
    child is independent of its parent's position.
    """

    algorithm = GENERATOR_NAME

    def __init__(self, seed: int, name: str = "") -> None:
        self.seed = int(seed)
        self.name = name
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(seed, name)))

    def split(self, name: str) -> RandomStream:
        return RandomStream(self.seed, f"{self.name}/{name}" if self.name else name)

    def uniform(self) -> float:
        """Next variate in the open interval (0, 1)."""
        self.position += 1
        # random() yields k/2**53 in [0, 1); only the zero draw needs moving
        u = float(self._gen.random())
        return u if u > 0.0 else _TINY

    def uniforms(self, n: int) -> np.ndarray:
        self.position += n
        u = self._gen.random(n)
        u[u == 0.0] = _TINY
        return u

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, name={self.name!r}, position={self.position})"


@lru_cache(maxsize=256)
def _discrete_table(spec: DistributionSpec) -> tuple[int, tuple[float, ...]]:
    """Support offset and cumulative probabilities for the discrete kinds."""
    if spec.kind == "binomial":
        n, p = int(spec["n"]), spec["p"]
        pmf = [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]
        offset = 0
    elif spec.kind == "poisson":
        lam = spec["lambda"]
        pmf, term, k = [], math.exp(-lam), 0
        limit = int(lam + 40 * math.sqrt(lam) + 50)
        while k <= limit:
            pmf.append(term)
            k += 1
            term *= lam / k
        offset = 0
    elif spec.kind == "logarithmic":
        p = spec["p"]
        norm = -1.0 / math.log1p(-p)
        pmf, k, total = [], 1, 0.0
        while total < 1 - 1e-16 and k < 100_000:
            term = norm * p**k / k
            pmf.append(term)
            total += term
            k += 1
        offset = 1
    else:  # pragma: no cover - guarded by callers
        raise InvalidParameters(f"{spec.kind} is not tabulated")
    cdf, acc = [], 0.0
    for term in pmf:
        acc += term
        cdf.append(acc)
    cdf[-1] = 1.0
    return offset, tuple(cdf)


def _inverse_cdf(spec: DistributionSpec, u: float) -> float:
    kind = spec.kind
    if kind == "uniform":
        lo, hi = spec["min"], spec["max"]
        return lo + (hi - lo) * u
    if kind == "normal":
        return spec["mu"] + spec["sigma"] * float(special.ndtri(u))
    if kind == "bernoulli":
        return 1.0 if u > 1.0 - spec["p"] else 0.0
    if kind == "exponential":
        return -math.log1p(-u) / spec["lambda"]
    if kind == "gamma":
        return float(special.gammaincinv(spec["k"], u)) * spec["theta"]
    if kind == "geometric":
        p = spec["p"]
        if p >= 1.0:
            return 1.0
        return float(max(1, math.ceil(math.log1p(-u) / math.log1p(-p))))
    if kind == "triangular":
        a, c, b = spec["a"], spec["c"], spec["b"]
        if u < (c - a) / (b - a):
            return a + math.sqrt(u * (b - a) * (c - a))
        return b - math.sqrt((1 - u) * (b - a) * (b - c))
    offset, cdf = _discrete_table(spec)
    return float(min(bisect.bisect_right(cdf, u), len(cdf) - 1) + offset)


def _inverse_cdf_array(spec: DistributionSpec, u: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "uniform":
        lo, hi = spec["min"], spec["max"]
        return lo + (hi - lo) * u
    if kind == "normal":
        return spec["mu"] + spec["sigma"] * special.ndtri(u)
    if kind == "bernoulli":
        return (u > 1.0 - spec["p"]).astype(float)
    if kind == "exponential":
        return -np.log1p(-u) / spec["lambda"]
    if kind == "gamma":
        return special.gammaincinv(spec["k"], u) * spec["theta"]
    if kind == "geometric":
        p = spec["p"]
        if p >= 1.0:
            return np.ones_like(u)
        return np.maximum(1.0, np.ceil(np.log1p(-u) / math.log1p(-p)))
    if kind == "triangular":
        a, c, b = spec["a"], spec["c"], spec["b"]
        left = a + np.sqrt(u * (b - a) * (c - a))
        right = b - np.sqrt((1 - u) * (b - a) * (b - c))
        return np.where(u < (c - a) / (b - a), left, right)
    offset, cdf = _discrete_table(spec)
    idx = np.searchsorted(np.asarray(cdf), u, side="right")
    return (np.minimum(idx, len(cdf) - 1) + offset).astype(float)


def sample(spec: DistributionSpec, stream: RandomStream) -> float:
    """Draw one raw value; consumes exactly one uniform from ``stream``."""
    return _inverse_cdf(spec, stream.uniform())


def sample_array(spec: DistributionSpec, stream: RandomStream, n: int) -> np.ndarray:
    """Vectorised ``sample``: ``n`` draws consuming ``n`` uniforms."""
    return _inverse_cdf_array(spec, stream.uniforms(n))


def to_unit(spec: DistributionSpec, x):
    """Map a raw draw (scalar or array) onto [0, 1] per the kind's rule.

    ========== =====================
    kind       mapping
    ========== =====================
    uniform    clamp to [0, 1]
    normal     clamp to [0, 1]
    triangular clamp to [0, 1]
    bernoulli  identity ({0, 1})
    binomial   k / n
    exponential min(x, 1)
    gamma      min(x, 1)
    poisson    min(k, 10) / 10
    geometric  1 / k
    logarithmic 1 / k
    ========== =====================
    """
    kind = spec.kind
    if kind == "binomial":
        out = x / spec["n"]
    elif kind == "poisson":
        out = np.minimum(x, POISSON_CAP) / POISSON_CAP
    elif kind in ("geometric", "logarithmic"):
        out = 1.0 / x
    else:
        out = x
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def unit_likelihood(spec: DistributionSpec, stream: RandomStream) -> float:
    return to_unit(spec, sample(spec, stream))


def unit_likelihood_array(spec: DistributionSpec, stream: RandomStream, n: int) -> np.ndarray:
    return to_unit(spec, sample_array(spec, stream, n))
