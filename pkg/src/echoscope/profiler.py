"""Per-host anomaly scoring with a tiny online autoencoder.

The model reconstructs min-max normalised feature vectors through a
bottleneck; the reconstruction RMSE is compared against a Gaussian tail
fitted (Welford) to the RMSEs of the observations it has learned from.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from collections import deque
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .features import FeatureVector, JitterReferenceSet

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LEARNING_RATE = 0.1
GRACE_N = 100
P_THRESHOLD = 1e-4
GUARD_A = 5


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass
class Autoencoder:
    """Two-layer sigmoid autoencoder; weights are ``(out, in)`` matrices."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    learning_rate: float = LEARNING_RATE

    def __post_init__(self):
        self.w1, self.b1, self.w2, self.b2 = (
            np.array(a, dtype=float) for a in (self.w1, self.b1, self.w2, self.b2))
        n_hidden, n_in = self.w1.shape
        if self.w2.shape != (n_in, n_hidden) or self.b1.shape != (n_hidden,) \
                or self.b2.shape != (n_in,):
            raise ValueError("inconsistent autoencoder shapes")
        if not n_hidden < n_in:
            raise ValueError("bottleneck must be narrower than the input")

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int = 3, n_hidden: int = 2,
             learning_rate: float = LEARNING_RATE) -> "Autoencoder":
        a1 = 1.0 / math.sqrt(n_in)
        a2 = 1.0 / math.sqrt(n_hidden)
        return cls(
            w1=rng.uniform(-a1, a1, (n_hidden, n_in)),
            b1=rng.uniform(-a1, a1, n_hidden),
            w2=rng.uniform(-a2, a2, (n_in, n_hidden)),
            b2=rng.uniform(-a2, a2, n_in),
            learning_rate=learning_rate,
        )

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                           self.learning_rate)

    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def with_params(self, theta) -> "Autoencoder":
        theta = np.asarray(theta, dtype=float)
        h, n = self.w1.shape
        cut = np.cumsum([h * n, h, n * h])
        w1, b1, w2, b2 = np.split(theta, cut)
        return Autoencoder(w1.reshape(h, n), b1, w2.reshape(n, h), b2, self.learning_rate)

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "learning_rate": self.learning_rate,
                "w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Autoencoder":
        m = cls(d["w1"], d["b1"], d["w2"], d["b2"], float(d["learning_rate"]))
        if list(m.sizes) != list(d["sizes"]):
            raise ValueError("stored layer sizes do not match the weights")
        return m


def _check_input(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("autoencoder input must be a finite vector")
    return v


def forward(model: Autoencoder, v) -> np.ndarray:
    v = _check_input(v)
    h = sigmoid(model.w1 @ v + model.b1)
    return sigmoid(model.w2 @ h + model.b2)


def loss(model: Autoencoder, v) -> float:
    """Half the squared reconstruction error."""
    d = forward(model, v) - np.asarray(v, dtype=float)
    return 0.5 * float(d @ d)


def gradient(model: Autoencoder, v) -> np.ndarray:
    """d loss / d params, flattened in :meth:`Autoencoder.params` order."""
    v = _check_input(v)
    h = sigmoid(model.w1 @ v + model.b1)
    out = sigmoid(model.w2 @ h + model.b2)
    d2 = (out - v) * out * (1.0 - out)
    d1 = (model.w2.T @ d2) * h * (1.0 - h)
    return np.concatenate([np.outer(d1, v).ravel(), d1, np.outer(d2, h).ravel(), d2])


def train_step(model: Autoencoder, v) -> Autoencoder:
    g = gradient(model, v)
    if not np.all(np.isfinite(g)):
        log.warning("non-finite gradient, SGD step skipped")
        return model
    return model.with_params(model.params() - model.learning_rate * g)


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return math.sqrt(float(np.mean((a - b) ** 2)))


@dataclass
class MinMaxNormalizer:
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def expand(self, v) -> None:
        v = np.asarray(v, dtype=float)
        if self.lo is None:
            self.lo, self.hi = v.copy(), v.copy()
        else:
            self.lo = np.minimum(self.lo, v)
            self.hi = np.maximum(self.hi, v)

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.lo is None:
            return np.full(v.shape, 0.5)
        span = self.hi - self.lo
        out = np.full(v.shape, 0.5)
        ok = span > 0
        out[ok] = (v[ok] - self.lo[ok]) / span[ok]
        # a feature with no spread yet: any departure is a full range away
        flat = ~ok
        out[flat] = 0.5 + np.sign(v[flat] - self.lo[flat])
        return out


@dataclass
class Welford:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, x: float) -> None:
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.count - 1)) if self.count > 1 else 0.0


@dataclass(frozen=True)
class Verdict:
    score: float
    is_alert: bool
    trained: bool
    threshold: float      # mu_r + z(p_thr) * sigma_r at decision time; inf while inactive
    tail_p: float         # P(X > score) under the fitted normal; 1 while inactive


def alert_threshold(mu: float, sigma: float, p_thr: float) -> float:
    return mu + NormalDist().inv_cdf(1.0 - p_thr) * sigma


def tail_probability(r: float, mu: float, sigma: float) -> float:
    if sigma <= 0:
        return 1.0 if r <= mu else 0.0
    return 0.5 * math.erfc((r - mu) / (sigma * math.sqrt(2.0)))


@dataclass
class HostProfile:
    model: Autoencoder
    grace_n: int = GRACE_N
    guard_a: int = GUARD_A
    normalizer: MinMaxNormalizer = field(default_factory=MinMaxNormalizer)
    stats: Welford = field(default_factory=Welford)
    jitter: JitterReferenceSet = field(default_factory=JitterReferenceSet)
    recent_alerts: deque = field(default_factory=deque)
    score_log: list = field(default_factory=list)

    @classmethod
    def new(cls, rng: np.random.Generator, grace_n: int = GRACE_N, guard_a: int = GUARD_A,
            learning_rate: float = LEARNING_RATE, n_hidden: int = 2,
            jitter: JitterReferenceSet | None = None) -> "HostProfile":
        return cls(model=Autoencoder.init(rng, 3, n_hidden, learning_rate), grace_n=grace_n,
                   guard_a=guard_a, jitter=jitter or JitterReferenceSet())

    @property
    def count(self) -> int:
        return self.stats.count

    @property
    def mu_r(self) -> float:
        return self.stats.mean

    @property
    def sigma_r(self) -> float:
        return self.stats.std

    @property
    def in_grace(self) -> bool:
        return self.count < self.grace_n

    def to_dict(self) -> dict:
        n = self.normalizer
        return {
            "version": FORMAT_VERSION,
            "model": self.model.to_dict(),
            "grace_n": self.grace_n,
            "guard_a": self.guard_a,
            "normalizer": None if n.lo is None else {"lo": n.lo.tolist(), "hi": n.hi.tolist()},
            "stats": {"count": self.stats.count, "mean": self.stats.mean, "m2": self.stats.m2},
            "jitter": self.jitter.to_dict(),
            "recent_alerts": list(self.recent_alerts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HostProfile":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported profile format {d.get('version')!r}")
        nd = d["normalizer"]
        norm = MinMaxNormalizer() if nd is None else MinMaxNormalizer(
            np.asarray(nd["lo"], dtype=float), np.asarray(nd["hi"], dtype=float))
        s = d["stats"]
        return cls(
            model=Autoencoder.from_dict(d["model"]),
            grace_n=int(d["grace_n"]),
            guard_a=int(d["guard_a"]),
            normalizer=norm,
            stats=Welford(int(s["count"]), float(s["mean"]), float(s["m2"])),
            jitter=JitterReferenceSet.from_dict(d["jitter"]),
            recent_alerts=deque((bool(a) for a in d["recent_alerts"]), maxlen=int(d["guard_a"])),
        )


def _bounded(x: np.ndarray) -> np.ndarray:
    # far outside the learned range the score is already decisive
    return np.clip(x, -1e6, 1e6)


def evaluate(profile: HostProfile, v: FeatureVector | np.ndarray, p_thr: float = P_THRESHOLD,
             timestamp: float | None = None) -> Verdict:
    """Scores ``v`` and, when it is safe to, learns from it (mutates ``profile``)."""
    raw = _check_input(v.as_array() if isinstance(v, FeatureVector) else v)
    if not 0 < p_thr < 1:
        raise ValueError("p_thr must lie in (0, 1)")
    if profile.recent_alerts.maxlen != profile.guard_a:
        profile.recent_alerts = deque(profile.recent_alerts, maxlen=profile.guard_a)
    grace = profile.in_grace
    if grace:
        # nothing is judged yet, so the bounds can take the sample first
        profile.normalizer.expand(raw)
    x = _bounded(profile.normalizer(raw))
    r = rmse(forward(profile.model, x), x)

    mu, sigma = profile.mu_r, profile.sigma_r
    if not grace and sigma > 0:
        threshold = alert_threshold(mu, sigma, p_thr)
        tail_p = tail_probability(r, mu, sigma)
        is_alert = r > threshold
    else:
        threshold, tail_p, is_alert = math.inf, 1.0, False

    trained = not is_alert and not any(profile.recent_alerts)
    if trained:
        if not grace:
            profile.normalizer.expand(raw)
            x = _bounded(profile.normalizer(raw))
        profile.model = train_step(profile.model, x)
        profile.stats.push(r)
    profile.recent_alerts.append(is_alert)
    profile.score_log.append((timestamp, r))
    return Verdict(r, is_alert, trained, threshold, tail_p)


def windowed_score(scores, window: int) -> np.ndarray:
    """Trailing moving average; the first entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        return s
    c = np.concatenate([[0.0], np.cumsum(s)])
    i = np.arange(1, s.size + 1)
    lo = np.maximum(i - window, 0)
    return (c[i] - c[lo]) / (i - lo)


def save_profile(profile: HostProfile, path: str | os.PathLike) -> None:
    """Atomic write: a crash leaves either the old file or the new one."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".profile-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(profile.to_dict(), f, sort_keys=True)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_profile(path: str | os.PathLike) -> HostProfile:
    with open(path) as f:
        return HostProfile.from_dict(json.load(f))
