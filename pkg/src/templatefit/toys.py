"""Seedable toy experiments: Poisson-fluctuated data and templates from analytic shapes.

The toy model has two components, a normal signal peak and a falling
exponential background, both truncated to the histogram range.  Bin
expectations are computed analytically and every bin of every component
is drawn from a Poisson distribution; no event-level sampling or
histogramming takes place, so the expectations are exact by construction.

The background density is taken as ``exp(-slope * x)`` on the range, a
decay constant equal to the configured slope.

Streams are counter-based (Philox keyed by seed and toy index), and the
Poisson sampler consumes only raw uniforms from the stream, so draws are
reproducible for a given (seed, toy_index) pair independent of the
backing library's own distribution samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .histogram import BinnedSample, TemplateModel
from .special import normal_cdf

__all__ = [
    "ToyConfig",
    "ToyDraw",
    "bin_probabilities",
    "rng_stream",
    "poisson",
    "draw",
    "to_model",
]


@dataclass(frozen=True)
class ToyConfig:
    """Configuration of the two-component toy experiment.

    Defaults: a normal signal (mean 1, width 0.1, yield 250) over a unit
    falling exponential background (yield 750), histogrammed in 15 equal
    bins over [0, 2], with ``n_mc`` simulated entries per template.
    """

    signal_yield: float = 250.0
    background_yield: float = 750.0
    signal_mean: float = 1.0
    signal_sigma: float = 0.1
    background_slope: float = 1.0
    range: tuple[float, float] = (0.0, 2.0)
    nbins: int = 15
    n_mc: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"range must be a finite interval, got {self.range}")
        if self.nbins < 1:
            raise ValueError(f"nbins must be at least 1, got {self.nbins}")
        if self.signal_sigma <= 0:
            raise ValueError(f"signal_sigma must be positive, got {self.signal_sigma}")
        if self.signal_yield < 0 or self.background_yield < 0:
            raise ValueError("yields must be nonnegative")
        if self.n_mc < 0:
            raise ValueError(f"n_mc must be nonnegative, got {self.n_mc}")

    def to_dict(self) -> dict:
        """JSON-ready plain dict (field names as attribute names)."""
        return {
            "signal_yield": self.signal_yield,
            "background_yield": self.background_yield,
            "signal_mean": self.signal_mean,
            "signal_sigma": self.signal_sigma,
            "background_slope": self.background_slope,
            "range": list(self.range),
            "nbins": self.nbins,
            "n_mc": self.n_mc,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ToyConfig":
        """Build from the JSON object form; unknown keys are rejected."""
        known = {
            "signal_yield",
            "background_yield",
            "signal_mean",
            "signal_sigma",
            "background_slope",
            "range",
            "nbins",
            "n_mc",
            "seed",
        }
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown toy config fields: {sorted(extra)}")
        kwargs = dict(obj)
        if "range" in kwargs:
            kwargs["range"] = tuple(kwargs["range"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ToyDraw:
    """One toy experiment: data, the two templates, and the generating truth."""

    data: BinnedSample
    templates: tuple[BinnedSample, BinnedSample]
    truth: tuple[float, float]


def bin_probabilities(config: ToyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin probabilities of the truncated signal and background shapes.

    Each vector sums to one; the signal uses the normal CDF, the
    background the closed-form integral of the truncated exponential.
    """
    lo, hi = config.range
    edges = np.linspace(lo, hi, config.nbins + 1)
    z = (edges - config.signal_mean) / config.signal_sigma
    cdf = np.array([normal_cdf(v) for v in z])
    signal = np.diff(cdf) / (cdf[-1] - cdf[0])
    lam = config.background_slope
    if lam == 0.0:
        background = np.diff(edges) / (hi - lo)
    else:
        expo = np.exp(-lam * edges)
        background = -np.diff(expo) / (expo[0] - expo[-1])
    return signal, background


def rng_stream(seed: int, toy_index: int) -> np.random.Generator:
    """Independent reproducible stream for one toy.

    Counter-based: the 128-bit Philox key packs the seed into the low
    word and the toy index into the high word, so equal pairs replay the
    identical stream and distinct indexes are statistically independent.
    """
    if toy_index < 0:
        raise ValueError(f"toy_index must be nonnegative, got {toy_index}")
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | (int(toy_index) << 64)
    return np.random.Generator(np.random.Philox(key=key))


_PTRS_SWITCH = 30.0


def poisson(rng: np.random.Generator, mu: float) -> int:
    """One Poisson draw built from raw uniforms of the stream.

    Sequential-search inversion below mean 30, transformed rejection with
    squeeze above.  Both are exact samplers; using them instead of the
    generator's own keeps draws stable across library versions.
    """
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"mean must be finite and nonnegative, got {mu}")
    if mu == 0.0:
        return 0
    if mu < _PTRS_SWITCH:
        return _poisson_inversion(rng, mu)
    return _poisson_ptrs(rng, mu)


def _poisson_inversion(rng: np.random.Generator, mu: float) -> int:
    u = rng.random()
    p = math.exp(-mu)
    acc = p
    k = 0
    # cap guards against the accumulated cdf saturating just below u
    while u > acc and k < 1100:
        k += 1
        p *= mu / k
        acc += p
    return k


def _poisson_ptrs(rng: np.random.Generator, mu: float) -> int:
    # Hoermann's transformed rejection with squeeze, valid for mu >= 10
    log_mu = math.log(mu)
    b = 0.931 + 2.53 * math.sqrt(mu)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mu + 0.43)
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b) <= (
            k * log_mu - mu - math.lgamma(k + 1.0)
        ):
            return int(k)


def draw(config: ToyConfig, rng: np.random.Generator) -> ToyDraw:
    """One toy experiment from the given stream.

    The stream is consumed in a fixed order: data signal bins, data
    background bins, signal template bins, background template bins.  The
    two data components are drawn separately and summed.
    """
    p_sig, p_bkg = bin_probabilities(config)
    data = np.empty(config.nbins)
    for i in range(config.nbins):
        data[i] = poisson(rng, config.signal_yield * p_sig[i])
    for i in range(config.nbins):
        data[i] += poisson(rng, config.background_yield * p_bkg[i])
    sig_t = np.array([poisson(rng, config.n_mc * p) for p in p_sig], dtype=np.float64)
    bkg_t = np.array([poisson(rng, config.n_mc * p) for p in p_bkg], dtype=np.float64)
    return ToyDraw(
        data=BinnedSample.from_counts(data),
        templates=(
            BinnedSample.from_counts(sig_t),
            BinnedSample.from_counts(bkg_t),
        ),
        truth=(config.signal_yield, config.background_yield),
    )


def to_model(config: ToyConfig, toy: ToyDraw) -> TemplateModel:
    """Histogram model of one toy draw, signal component first."""
    lo, hi = config.range
    return TemplateModel(
        edges=np.linspace(lo, hi, config.nbins + 1),
        data=toy.data,
        components=toy.templates,
        names=("signal", "background"),
    )
