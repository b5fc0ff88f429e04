"""Grasp-trial statistics: phase detection, RMS validation, equilibrium gap,
normalised finger shares, balance and steadiness variances, and the
Mann-Whitney U test used for every between-condition comparison."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, NailforceError, NoGraspError, TrialError, UndefinedGapError
from .synth import FINGERS, GraspSession

FINGER_TRIO = ("index", "middle", "ring")
ALPHA = 0.05
EXACT_LIMIT = 20

# RMS validation errors reported for the constrained grasps (N, mean and sd);
# human-subject values kept only to annotate reports
REFERENCE_RMS_N = {
    "thumb": (0.82, 0.06),
    "index": (0.62, 0.04),
    "middle": (0.59, 0.03),
    "ring": (0.64, 0.04),
}


@dataclass
class GraspTrial:
    dt: float
    forces: Dict[str, np.ndarray]                  # finger -> (n, 3) fx, fy, fz
    reference: Optional[Dict[str, np.ndarray]] = None
    boundaries: Optional["PhaseBoundaries"] = None
    scenario: str = ""
    trial_id: str = ""

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.forces.values())))

    @classmethod
    def from_session(cls, session: GraspSession, trial_id: str = "", reference=None) -> "GraspTrial":
        return cls(session.dt, {k: np.asarray(v) for k, v in session.forces.items()},
                   reference, None, session.scenario, trial_id or f"{session.scenario}-{session.seed}")


class PhaseBoundaries(NamedTuple):
    grasp: int
    lift: int
    hold: int
    hold_end: int
    replace: int

    def hold_window(self) -> slice:
        return slice(self.hold, self.hold_end)


@dataclass(frozen=True)
class PhaseThresholds:
    contact_n: float = 0.5
    sustain_s: float = 0.2
    lift_ratio: float = 1.1
    plateau_delay_s: float = 0.5
    plateau_span_s: float = 1.0
    band: float = 0.10
    min_hold_s: float = 5.0


def _sustained(mask: np.ndarray, start: int, run: int) -> int:
    """First index >= start opening a run of ``run`` consecutive true samples, or -1."""
    if run <= 1:
        hits = np.flatnonzero(mask[start:])
        return int(hits[0] + start) if hits.size else -1
    m = mask[start:].astype(int)
    if m.size < run:
        return -1
    window = np.convolve(m, np.ones(run, dtype=int), mode="valid")
    hits = np.flatnonzero(window == run)
    return int(hits[0] + start) if hits.size else -1


def longest_stable_window(x: np.ndarray, start: int, band: float, min_len: int):
    """Longest window beginning at or after ``start`` whose samples stay within
    ``band`` of the window mean.  Each candidate start is extended greedily."""
    best = (-1, -1)
    n = len(x)
    for i in range(start, n - min_len + 1):
        if x[i] <= 0:
            continue
        seg = x[i:]
        count = np.arange(1, seg.size + 1)
        mean = np.cumsum(seg) / count
        ok = (np.maximum.accumulate(seg) <= (1 + band) * mean) & \
             (np.minimum.accumulate(seg) >= (1 - band) * mean)
        bad = np.flatnonzero(~ok)
        length = int(bad[0]) if bad.size else seg.size
        if length >= min_len and length > best[1] - best[0]:
            best = (i, i + length)
            if i + length >= n:
                break
    return best


def detect_phases(trial: GraspTrial, th: PhaseThresholds = PhaseThresholds()) -> PhaseBoundaries:
    """Locate grasp, lift, hold and replace boundaries from the force series."""
    dt = trial.dt
    n = trial.n_samples
    if n * dt < 2.0:
        raise DomainError("phase detection needs at least 2 s of samples")
    thumb = trial.forces["thumb"][:, 2]
    total = sum(trial.forces[f][:, 2] for f in FINGERS if f in trial.forces)
    run = max(1, int(round(th.sustain_s / dt)))

    grasp = _sustained(thumb > th.contact_n, 0, run)
    if grasp < 0:
        raise NoGraspError("thumb normal force never exceeds the contact threshold")
    p0 = grasp + int(round(th.plateau_delay_s / dt))
    p1 = p0 + max(1, int(round(th.plateau_span_s / dt)))
    if p1 > n:
        raise NoGraspError("contact too short to establish a pre-lift plateau")
    plateau = float(np.median(total[p0:p1]))
    lift = _sustained(total > th.lift_ratio * plateau, p0, run)
    if lift < 0:
        raise NoGraspError("no lift detected")
    min_len = int(round(th.min_hold_s / dt))
    hold, hold_end = longest_stable_window(total, lift, th.band, min_len)
    if hold < 0:
        raise NoGraspError("no stable hold window found")
    replace = _sustained(thumb < th.contact_n, hold, run)
    if replace < 0:
        replace = n
    return PhaseBoundaries(grasp, lift, hold, hold_end, replace)


# -- per-trial metrics --------------------------------------------------------------

class RmsResult(NamedTuple):
    per_axis: np.ndarray
    combined: float


def rms_error(est, ref) -> RmsResult:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise DomainError(f"series shapes differ: {est.shape} vs {ref.shape}")
    d = (est - ref).reshape(len(est), -1)
    return RmsResult(np.sqrt(np.mean(d ** 2, axis=0)), float(np.sqrt(np.mean(d ** 2))))


def _window(trial: GraspTrial, window) -> slice:
    if window is None:
        b = trial.boundaries or detect_phases(trial)
        window = b.hold_window()
    if isinstance(window, tuple):
        window = slice(*window)
    if window.stop is not None and window.start is not None and window.stop <= window.start:
        raise DomainError("hold window is empty")
    return window


def _normal(series):
    return series[:, 2]


def _shear(series):
    return np.hypot(series[:, 0], series[:, 1])


def equilibrium_gap(trial: GraspTrial, window=None) -> Dict[str, float]:
    """Percent mismatch between the summed finger force and the thumb force."""
    w = _window(trial, window)
    fingers = sum(trial.forces[f][w] for f in FINGER_TRIO)
    thumb = trial.forces["thumb"][w]
    if len(thumb) == 0:
        raise DomainError("hold window is empty")
    out = {}
    for name, agg in (("normal", _normal), ("shear", _shear)):
        t_mean = float(np.mean(agg(thumb)))
        if abs(t_mean) < 1e-6:
            raise UndefinedGapError(f"thumb {name} force mean {t_mean:.3g} N is ~0")
        out[name] = 100.0 * abs(float(np.mean(agg(fingers))) - t_mean) / t_mean
    return out


def hold_means(trial: GraspTrial, window=None) -> Dict[str, Dict[str, float]]:
    w = _window(trial, window)
    return {f: {"normal": float(np.mean(_normal(trial.forces[f][w]))),
                "shear": float(np.mean(_shear(trial.forces[f][w])))}
            for f in FINGERS if f in trial.forces}


def normalize_shares(trial: GraspTrial, window=None, component: str = "normal") -> Dict[str, float]:
    means = hold_means(trial, window)
    vals = np.array([means[f][component] for f in FINGER_TRIO])
    total = vals.sum()
    if total <= 1e-6:
        raise DomainError("total finger force is ~0; shares undefined")
    shares = 100.0 * vals / total
    return dict(zip(FINGER_TRIO, map(float, shares)))


def shares_from_means(means: Sequence[float]) -> np.ndarray:
    vals = np.asarray(means, dtype=np.float64)
    total = vals.sum()
    if total <= 1e-6:
        raise DomainError("total finger force is ~0; shares undefined")
    return 100.0 * vals / total


def sample_variance(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.var(v, ddof=1)) if v.size >= 2 else 0.0


def balance_variance(trial: GraspTrial, window=None) -> Dict[str, float]:
    """Across-finger variance of the three hold means (n-1 denominator)."""
    means = hold_means(trial, window)
    return {c: sample_variance([means[f][c] for f in FINGER_TRIO]) for c in ("normal", "shear")}


def steadiness_variance(trial: GraspTrial, window=None) -> Dict[str, Dict[str, float]]:
    """Over-time variance of each finger's force during the hold window."""
    w = _window(trial, window)
    out = {}
    for f in FINGERS:
        if f not in trial.forces:
            continue
        s = trial.forces[f][w]
        if len(s) < 2:
            raise DomainError("hold window needs at least two samples")
        out[f] = {"normal": sample_variance(_normal(s)), "shear": sample_variance(_shear(s))}
    return out


# -- Mann-Whitney U -------------------------------------------------------------------

class MannWhitneyResult(NamedTuple):
    U: float
    p: float
    mode: str


def _rank_sum_counts(doubled_ranks: np.ndarray, n1: int) -> Dict[int, int]:
    """Number of size-``n1`` subsets for every attainable doubled rank sum."""
    table: List[Dict[int, int]] = [dict() for _ in range(n1 + 1)]
    table[0][0] = 1
    for r in doubled_ranks:
        for j in range(n1, 0, -1):
            prev = table[j - 1]
            cur = table[j]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    return table[n1]


def mann_whitney_u(xs, ys, mode: str = "auto") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; ``U = min(U1, U2)`` with midranks.

    ``exact`` computes the permutation distribution of the rank sum over all
    ``C(n1 + n2, n1)`` labellings (midranks are used as-is when ties are
    present); ``normal`` uses the tie- and continuity-corrected normal
    approximation.  ``auto`` picks exact for ``n1 + n2 <= 20``.
    """
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise DomainError("both samples must be non-empty")
    n = n1 + n2
    if mode == "auto":
        mode = "exact" if n <= EXACT_LIMIT else "normal"
    ranks = rankdata(np.concatenate([x, y]))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u = min(u1, n1 * n2 - u1)
    if mode == "exact":
        if n > EXACT_LIMIT:
            raise DomainError(f"exact mode supports n1 + n2 <= {EXACT_LIMIT}")
        doubled = np.rint(2 * ranks).astype(int)
        counts = _rank_sum_counts(doubled, n1)
        total = math.comb(n, n1)
        offset = n1 * (n1 + 1)
        hits = 0
        for s2, c in counts.items():
            u1_alt = (s2 - offset) / 2.0
            if min(u1_alt, n1 * n2 - u1_alt) <= u + 1e-9:
                hits += c
        return MannWhitneyResult(u, hits / total, "exact")
    if mode == "normal":
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
        var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
        if var <= 0:
            return MannWhitneyResult(u, 1.0, "normal")
        z = max(abs(u - n1 * n2 / 2.0) - 0.5, 0.0) / math.sqrt(var)
        return MannWhitneyResult(u, min(1.0, math.erfc(z / math.sqrt(2.0))), "normal")
    raise DomainError(f"unknown mode {mode!r}")


# -- multi-trial report ---------------------------------------------------------------

@dataclass
class TrialStats:
    trial_id: str
    condition: str
    boundaries: PhaseBoundaries
    hold_means: Dict[str, Dict[str, float]]
    shares: Dict[str, Dict[str, float]]
    balance: Dict[str, float]
    steadiness: Dict[str, Dict[str, float]]
    equilibrium_gap: Dict[str, float]
    rms: Dict[str, float] = field(default_factory=dict)


def trial_stats(trial: GraspTrial, condition: str = "",
                thresholds: PhaseThresholds = PhaseThresholds()) -> TrialStats:
    try:
        b = trial.boundaries or detect_phases(trial, thresholds)
        w = b.hold_window()
        rms = {}
        if trial.reference:
            for f in FINGERS:
                if f in trial.reference and f in trial.forces:
                    rms[f] = rms_error(trial.forces[f][w], trial.reference[f][w]).combined
        return TrialStats(
            trial_id=trial.trial_id,
            condition=condition or trial.scenario,
            boundaries=b,
            hold_means=hold_means(trial, w),
            shares={c: normalize_shares(trial, w, c) for c in ("normal", "shear")},
            balance=balance_variance(trial, w),
            steadiness=steadiness_variance(trial, w),
            equilibrium_gap=equilibrium_gap(trial, w),
            rms=rms,
        )
    except TrialError:
        raise
    except NailforceError as exc:
        raise TrialError(trial.trial_id, exc) from exc


@dataclass
class UTest:
    quantity: str
    finger: str
    component: str
    condition_a: str
    condition_b: str
    U: float
    p: float
    mode: str

    @property
    def significant(self) -> bool:
        return self.p < ALPHA


@dataclass
class Report:
    conditions: Dict[str, List[TrialStats]]
    tests: List[UTest]
    summary: Dict[str, dict]

    def test(self, quantity, finger, component) -> UTest:
        for t in self.tests:
            if (t.quantity, t.finger, t.component) == (quantity, finger, component):
                return t
        raise KeyError((quantity, finger, component))


def _mean_sd(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0}


def _condition_summary(stats: List[TrialStats]) -> dict:
    out = {"n_trials": len(stats), "hold_means": {}, "shares": {}, "steadiness": {},
           "balance": {}, "equilibrium_gap": {}, "rms": {}}
    for f in FINGERS:
        if all(f in s.hold_means for s in stats):
            out["hold_means"][f] = {c: _mean_sd([s.hold_means[f][c] for s in stats])
                                    for c in ("normal", "shear")}
            out["steadiness"][f] = {c: _mean_sd([s.steadiness[f][c] for s in stats])
                                    for c in ("normal", "shear")}
    for c in ("normal", "shear"):
        out["shares"][c] = {f: _mean_sd([s.shares[c][f] for s in stats]) for f in FINGER_TRIO}
        out["balance"][c] = _mean_sd([s.balance[c] for s in stats])
        gaps = [s.equilibrium_gap[c] for s in stats]
        out["equilibrium_gap"][c] = {"mean": float(np.mean(gaps)), "max": float(np.max(gaps))}
    for f in FINGERS:
        vals = [s.rms[f] for s in stats if f in s.rms]
        if vals:
            out["rms"][f] = _mean_sd(vals)
    return out


def _pairwise(a_name, a, b_name, b, mode) -> List[UTest]:
    tests = []

    def add(quantity, finger, comp, getter):
        xa, xb = [getter(s) for s in a], [getter(s) for s in b]
        r = mann_whitney_u(xa, xb, mode)
        tests.append(UTest(quantity, finger, comp, a_name, b_name, r.U, r.p, r.mode))

    for comp in ("normal", "shear"):
        for f in FINGERS:
            add("hold_mean", f, comp, lambda s, f=f, comp=comp: s.hold_means[f][comp])
        add("hold_mean", "total", comp,
            lambda s, comp=comp: sum(s.hold_means[f][comp] for f in FINGER_TRIO))
        for f in FINGER_TRIO:
            add("share", f, comp, lambda s, f=f, comp=comp: s.shares[comp][f])
        add("balance", "all", comp, lambda s, comp=comp: s.balance[comp])
        for f in FINGERS:
            add("steadiness", f, comp, lambda s, f=f, comp=comp: s.steadiness[f][comp])
    return tests


def rms_tests(stats: List[TrialStats], mode: str = "auto") -> List[UTest]:
    """Compare estimation errors between fingers.

    Every finger pair is tested, plus one pooled test of the thumb against
    the other three fingers combined.
    """
    tests = []
    have = [f for f in FINGERS if all(f in s.rms for s in stats)]
    for fa, fb in itertools.combinations(have, 2):
        r = mann_whitney_u([s.rms[fa] for s in stats], [s.rms[fb] for s in stats], mode)
        tests.append(UTest("rms", f"{fa}|{fb}", "combined", "", "", r.U, r.p, r.mode))
    if "thumb" in have and len(have) > 1:
        others = [s.rms[f] for s in stats for f in have if f != "thumb"]
        r = mann_whitney_u([s.rms["thumb"] for s in stats], others, mode)
        tests.append(UTest("rms", "thumb|pooled", "combined", "", "", r.U, r.p, r.mode))
    return tests


def trial_report(trials: Mapping[str, Sequence[GraspTrial]], mode: str = "auto",
                 thresholds: PhaseThresholds = PhaseThresholds()) -> Report:
    """Per-condition aggregates plus pairwise U tests between conditions."""
    if len(trials) < 1:
        raise DomainError("no conditions given")
    stats: Dict[str, List[TrialStats]] = {}
    for cond, group in trials.items():
        if len(group) < 2:
            raise DomainError(f"condition {cond!r} needs at least two trials")
        ordered = sorted(group, key=lambda t: t.trial_id)
        stats[cond] = [trial_stats(t, cond, thresholds) for t in ordered]
    tests: List[UTest] = []
    for (a, sa), (b, sb) in itertools.combinations(stats.items(), 2):
        tests.extend(_pairwise(a, sa, b, sb, mode))
    for cond, s in stats.items():
        for t in rms_tests(s, mode):
            t.condition_a = t.condition_b = cond
            tests.append(t)
    summary = {cond: _condition_summary(s) for cond, s in stats.items()}
    return Report(stats, tests, summary)
