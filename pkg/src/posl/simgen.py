"""Seeded panel generators that record the true conditional mean.

Every generator returns the series together with ``psi0(t) = E[Y(t) | past]``
computed from the generator's own innovations, which makes the oracle
selector computable on simulated data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ._kernels import arma_filter, mar_filter
from .core import Panel, PanelRecord
from .errors import InvalidMixture, MissingTruth, NonStationarySpec, ValidationError

__all__ = [
    "ArimaSpec",
    "MarSpec",
    "TruthTrace",
    "Simulation",
    "DEFAULT_AR",
    "DEFAULT_MA",
    "gen_baseline",
    "offset",
    "gen_arima",
    "gen_interrupted",
    "gen_mar",
    "build_simulation",
    "subject_rng",
    "read_truth_csv",
]

DEFAULT_AR = (0.4, 0.2, 0.1, 0.05, 0.05)
# alternating signs keep the target far from anything an autoregression fitted
# to the historical series can represent; a target-only fit closes the gap
DEFAULT_MA = (-0.4, 0.3, -0.2, 0.1, -0.05)
OFFSET_COEF = np.array([0.5, 0.02, 0.5])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def subject_rng(seed: int, subject_index: int) -> np.random.Generator:
    """Independent stream per subject; adding subjects leaves others untouched."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(subject_index)]))


@dataclass(frozen=True)
class ArimaSpec:
    ar: Tuple[float, ...] = ()
    ma: Tuple[float, ...] = ()
    innovation_sd: float = 1.0
    burn_in: int = 200

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(a) for a in self.ar))
        object.__setattr__(self, "ma", tuple(float(a) for a in self.ma))
        if not self.innovation_sd > 0:
            raise ValidationError("innovation_sd must be > 0")
        if self.burn_in < 10 * (len(self.ar) + len(self.ma)):
            raise ValidationError(f"burn_in must be >= {10 * (len(self.ar) + len(self.ma))}")
        if self.ar and not self.is_stationary(self.ar):
            raise NonStationarySpec(f"AR polynomial {self.ar} has a root on or inside the unit circle")

    @staticmethod
    def is_stationary(ar: Sequence[float]) -> bool:
        # roots of 1 - a1 z - ... - ap z^p must lie outside the unit circle
        coeffs = np.r_[-np.asarray(ar, dtype=float)[::-1], 1.0]
        coeffs = np.trim_zeros(coeffs, "f")
        if len(coeffs) <= 1:
            return True
        return bool(np.all(np.abs(np.roots(coeffs)) > 1.0 + 1e-10))

    @property
    def p(self) -> int:
        return len(self.ar)

    @property
    def q(self) -> int:
        return len(self.ma)


@dataclass(frozen=True)
class MarSpec:
    """Gaussian mixture autoregression: ``(probability, ArimaSpec)`` pairs with ``q = 0``."""

    components: Tuple[Tuple[float, ArimaSpec], ...]
    level: float = 0.0

    def __post_init__(self):
        comps = tuple((float(p), s) for p, s in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise InvalidMixture("a mixture needs at least one component")
        probs = np.array([p for p, _ in comps])
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidMixture(f"mixing probabilities must be positive and sum to 1, got {probs}")
        if any(s.q for _, s in comps):
            raise InvalidMixture("mixture components must be pure autoregressions")

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for p, _ in self.components])

    @property
    def burn_in(self) -> int:
        return max(s.burn_in for _, s in self.components)


@dataclass(frozen=True, eq=False)
class TruthTrace:
    """True conditional means keyed by subject: ``{id: (times, psi0)}``."""

    values: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def single(cls, psi, subject_id: int = 0, start: int = 1) -> "TruthTrace":
        psi = np.asarray(psi, dtype=float)
        return cls({int(subject_id): (np.arange(start, start + len(psi), dtype=np.int64), psi)})

    def merge(self, other: "TruthTrace") -> "TruthTrace":
        out = dict(self.values)
        out.update(other.values)
        return TruthTrace(out)

    @property
    def subjects(self) -> list:
        return sorted(self.values)

    def psi(self, subject_id: int) -> np.ndarray:
        return self._get(subject_id)[1]

    def times(self, subject_id: int) -> np.ndarray:
        return self._get(subject_id)[0]

    def _get(self, subject_id):
        try:
            return self.values[int(subject_id)]
        except KeyError:
            raise MissingTruth(f"no truth recorded for subject {subject_id}") from None

    def value(self, subject_id: int, t: int) -> float:
        times, psi = self._get(subject_id)
        k = int(np.searchsorted(times, t))
        if k >= len(times) or times[k] != t:
            raise MissingTruth(f"no truth for subject {subject_id} at t={t}")
        return float(psi[k])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "t", "psi0"])
            for sid in self.subjects:
                times, psi = self.values[sid]
                for t, v in zip(times, psi):
                    w.writerow([sid, int(t), repr(float(v))])
        return path


def read_truth_csv(path) -> TruthTrace:
    rows: Dict[int, list] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "t", "psi0"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: truth file needs columns id,t,psi0")
        for row in reader:
            rows.setdefault(int(row["id"]), []).append((int(row["t"]), float(row["psi0"])))
    values = {}
    for sid, items in rows.items():
        items.sort()
        values[sid] = (np.array([t for t, _ in items], dtype=np.int64),
                       np.array([v for _, v in items]))
    return TruthTrace(values)


def gen_baseline(seed) -> np.ndarray:
    """Baseline covariates ``(W1, W2, W3)``: Bernoulli(0.5), U(19, 90), U(0, 2)."""
    rng = _rng(seed)
    w1 = float(rng.integers(0, 2))
    w2 = float(rng.uniform(19.0, 90.0))
    w3 = float(rng.uniform(0.0, 2.0))
    return np.array([w1, w2, w3])


def offset(X) -> float:
    """Covariate-dependent level ``0.5 W1 + 0.02 W2 + 0.5 W3``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (3,):
        raise ValidationError(f"baseline must have 3 entries, got shape {X.shape}")
    return float(OFFSET_COEF @ X)


def _pad(rows, width):
    out = np.zeros((len(rows), max(width, 1)))
    for k, r in enumerate(rows):
        out[k, :len(r)] = r
    return out


def gen_arima(spec: ArimaSpec, length: int, seed, offset: float = 0.0,
              subject_id: int = 0) -> Tuple[np.ndarray, TruthTrace]:
    """ARMA series of ``length`` points around ``offset`` after burn-in."""
    return gen_interrupted(spec, spec, length, length, seed, offset, subject_id)


def gen_interrupted(spec_a: ArimaSpec, spec_b: ArimaSpec, switch_time: int, length: int,
                    seed, offset: float = 0.0, subject_id: int = 0) -> Tuple[np.ndarray, TruthTrace]:
    """Regime ``a`` for ``t <= switch_time``, regime ``b`` afterwards (``t`` is 1-based).

    The recursion state carries over the switch.  ``switch_time = length``
    is accepted internally so that :func:`gen_arima` shares this path.
    """
    if length < 1:
        raise ValidationError("length must be >= 1")
    if not 1 <= switch_time <= length:
        raise ValidationError(f"switch_time must be in [1, {length - 1}]")
    rng = _rng(seed)
    burn = spec_a.burn_in
    total = burn + length
    z = rng.standard_normal(total)
    regime = np.zeros(total, dtype=np.int64)
    regime[burn + switch_time:] = 1
    sd = np.array([spec_a.innovation_sd, spec_b.innovation_sd])
    eps = z * sd[regime]
    ar = _pad([spec_a.ar, spec_b.ar], max(spec_a.p, spec_b.p))
    ma = _pad([spec_a.ma, spec_b.ma], max(spec_a.q, spec_b.q))
    y, psi = arma_filter(eps, ar, ma, regime, np.full(total, float(offset)))
    return y[burn:].copy(), TruthTrace.single(psi[burn:].copy(), subject_id)


def gen_mar(spec: MarSpec, length: int, seed, offset: float = 0.0,
            subject_id: int = 0) -> Tuple[np.ndarray, TruthTrace]:
    """Mixture autoregression; the truth mixes component means by probability."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = _rng(seed)
    burn = spec.burn_in
    total = burn + length
    z = rng.standard_normal(total)
    K = len(spec.components)
    comp = rng.choice(K, size=total, p=spec.probs) if K > 1 else np.zeros(total, dtype=np.int64)
    ar = _pad([s.ar for _, s in spec.components], max(s.p for _, s in spec.components))
    sd = np.array([s.innovation_sd for _, s in spec.components])
    level = np.full(total, spec.level + float(offset))
    y, psi = mar_filter(z, comp, ar, sd, spec.probs, level)
    return y[burn:].copy(), TruthTrace.single(psi[burn:].copy(), subject_id)


# two-component mixtures with a common level and differing innovation sd;
# the target's autoregression differs from the historical one
HISTORICAL_MAR = MarSpec(((0.6, ArimaSpec((0.5, 0.2), innovation_sd=0.5)),
                          (0.4, ArimaSpec((0.5, 0.2), innovation_sd=1.5))))
TARGET_MAR = MarSpec(((0.5, ArimaSpec((-0.3, 0.3), innovation_sd=0.5)),
                      (0.5, ArimaSpec((-0.3, 0.3), innovation_sd=1.5))))


@dataclass(frozen=True, eq=False)
class Simulation:
    which: int
    historical: Panel
    target: PanelRecord
    truth: TruthTrace
    meta: dict

    @property
    def panel(self) -> Panel:
        return Panel(list(self.historical) + [self.target], self.historical.horizon_tau)


def _record(sid, baseline, y):
    n = len(y)
    return PanelRecord(sid, baseline, np.arange(1, n + 1), np.zeros((n, 0)), y, 0, n)


def build_simulation(which: int, n_historical: int = 30, tau: int = 540, seed: int = 0,
                     ar: Optional[Sequence[float]] = None, ma: Optional[Sequence[float]] = None,
                     switch_time: Optional[int] = None) -> Simulation:
    """One of four designs: historical ids ``1..n``, target id ``n + 1``.

    1. historical AR, target MA, no offset;
    2. as 1 plus a per-subject covariate offset;
    3. as 2 with the target switching from MA to AR after ``switch_time``
       (default ``tau // 2``);
    4. mixture autoregressions sharing level, differing in spread, with
       covariate offsets.
    """
    if which not in (1, 2, 3, 4):
        raise ValidationError(f"which must be 1..4, got {which}")
    if n_historical < 1 or tau < 2:
        raise ValidationError("need n_historical >= 1 and tau >= 2")
    ar_spec = ArimaSpec(tuple(DEFAULT_AR if ar is None else ar))
    ma_spec = ArimaSpec((), tuple(DEFAULT_MA if ma is None else ma))
    switch = tau // 2 if switch_time is None else int(switch_time)
    records, truth = [], TruthTrace()
    target_id = n_historical + 1
    for sid in range(1, n_historical + 2):
        rng = subject_rng(seed, sid)
        X = gen_baseline(rng)
        level = 0.0 if which == 1 else offset(X)
        is_target = sid == target_id
        if which == 4:
            y, tr = gen_mar(TARGET_MAR if is_target else HISTORICAL_MAR, tau, rng, level, sid)
        elif not is_target:
            y, tr = gen_arima(ar_spec, tau, rng, level, sid)
        elif which == 3:
            y, tr = gen_interrupted(ma_spec, ar_spec, switch, tau, rng, level, sid)
        else:
            y, tr = gen_arima(ma_spec, tau, rng, level, sid)
        records.append(_record(sid, X, y))
        truth = truth.merge(tr)
    meta = {"which": which, "n_historical": n_historical, "tau": tau, "seed": seed,
            "ar": list(ar_spec.ar), "ma": list(ma_spec.ma), "innovation_sd": 1.0,
            "burn_in": ar_spec.burn_in, "target_id": target_id}
    if which == 3:
        meta["switch_time"] = switch
    if which == 4:
        meta["historical_mar"] = _mar_meta(HISTORICAL_MAR)
        meta["target_mar"] = _mar_meta(TARGET_MAR)
    return Simulation(which, Panel(records[:-1], tau), records[-1], truth, meta)


def _mar_meta(spec: MarSpec) -> list:
    return [{"prob": p, "ar": list(s.ar), "sd": s.innovation_sd} for p, s in spec.components]
