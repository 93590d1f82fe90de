"""Calendar-time log-rank statistics and their joint covariance estimator.

Both endpoints are compared between arms with the unweighted log-rank score

    u = n^{-1/2} * sum_i d_i * (z_i - Y1(x_i) / Y(x_i)),

where Y and Y1 are the pooled and the arm-1 at-risk counts at the patient's
own time on study.  The marginal variance estimator sums the at-risk-share
products over events.  Covariances between endpoints and between analysis
times come from per-patient martingale residuals built out of the pooled
Nelson-Aalen estimator and the arm-wise at-risk shares; same-endpoint
covariances across analysis times reduce to the variance at the earlier time
(independent increments).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, InconsistentSnapshots
from .trialdata import OS, PFS, Snapshot

__all__ = [
    "StepFunction",
    "LogrankResult",
    "GroupShare",
    "CovarianceEstimate",
    "nelson_aalen",
    "logrank",
    "group_share",
    "cross_covariance",
    "covariance_matrix",
]

CORRELATION_CLAMP = 0.9999


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous cumulative step function, 0 before the first jump."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, s):
        idx = np.searchsorted(self.times, s, side="right") - 1
        padded = np.concatenate(([0.0], self.values))
        return padded[idx + 1]


@dataclass(frozen=True)
class LogrankResult:
    """Scaled log-rank score, variance estimate and event count."""

    u: float
    var: float
    n_events: int
    n_ref: int

    @property
    def z(self) -> float:
        """Standardized statistic; nan when the variance is 0."""
        if self.var <= 0.0:
            return float("nan")
        return self.u / np.sqrt(self.var)

    def require_z(self) -> float:
        if self.var <= 0.0:
            raise DegenerateVariance(
                f"variance estimate is 0 with {self.n_events} events")
        return self.z


@dataclass(frozen=True)
class GroupShare:
    """Arm-wise opposite-share curve and its hazard integral on the event grid.

    ``mu`` holds 1 - Y_arm / Y at each pooled event time, ``psi`` the running
    integral of ``mu`` against the Nelson-Aalen increments up to and including
    that time.
    """

    arm: int
    times: np.ndarray
    mu: np.ndarray
    psi: np.ndarray

    def psi_at(self, s):
        return StepFunction(self.times, self.psi)(s)


class _EndpointCurves:
    """Everything the estimators need for one (snapshot, endpoint) pair."""

    def __init__(self, snap: Snapshot, endpoint: str):
        x = snap.times(endpoint)
        d = snap.events(endpoint)
        arm = snap.arm
        m = len(x)
        n_ref = snap.n_ref

        order = np.argsort(x, kind="stable")
        xs = x[order]
        ds = d[order]
        zs = (arm[order] == 1)

        if m:
            new_value = np.empty(m, dtype=bool)
            new_value[0] = True
            new_value[1:] = xs[1:] > xs[:-1]
            group_first = np.maximum.accumulate(
                np.where(new_value, np.arange(m), 0))
            # at-risk counts at each sorted position's own time
            suffix_total = m - group_first
            ones_rev = np.cumsum(zs[::-1])[::-1]
            suffix_arm1 = ones_rev[group_first]
        else:
            new_value = np.zeros(0, dtype=bool)
            group_first = np.zeros(0, dtype=int)
            suffix_total = np.zeros(0, dtype=int)
            suffix_arm1 = np.zeros(0, dtype=int)

        share1 = np.divide(suffix_arm1, suffix_total,
                           out=np.zeros(m), where=suffix_total > 0)
        share0 = np.divide(suffix_total - suffix_arm1, suffix_total,
                           out=np.zeros(m), where=suffix_total > 0)

        score_terms = np.where(ds, zs.astype(float) - share1, 0.0)
        var_terms = np.where(ds, share0 * share1, 0.0)
        self.result = LogrankResult(
            u=float(score_terms.sum()) / np.sqrt(n_ref) if n_ref else 0.0,
            var=float(var_terms.sum()) / n_ref if n_ref else 0.0,
            n_events=int(ds.sum()),
            n_ref=n_ref,
        )

        # pooled hazard jumps on the distinct event-time grid
        event_pos = np.flatnonzero(ds)
        grid_first = np.unique(group_first[event_pos])
        grid_times = xs[grid_first]
        counts = np.zeros(m)
        np.add.at(counts, group_first[event_pos], 1.0)
        d_lambda = counts[grid_first] / suffix_total[grid_first]
        # opposite-arm share per group at the grid: mu_g = 1 - Y_g / Y
        mu1 = 1.0 - share1[grid_first]
        mu0 = 1.0 - share0[grid_first]
        self.grid_times = grid_times
        self.d_lambda = d_lambda
        self.mu0_grid = mu0
        self.mu1_grid = mu1
        self.psi0 = np.cumsum(mu0 * d_lambda)
        self.psi1 = np.cumsum(mu1 * d_lambda)

        # per-patient residuals mu^{(z_i)}(x_i) * d_i - psi^{(z_i)}(x_i),
        # scattered back into cohort positions (0 for absent patients)
        mu_own_sorted = np.where(zs, 1.0 - share1, 1.0 - share0)
        psi0_step = StepFunction(grid_times, self.psi0)
        psi1_step = StepFunction(grid_times, self.psi1)
        psi_own_sorted = np.where(zs, psi1_step(xs), psi0_step(xs))
        resid_sorted = mu_own_sorted * ds - psi_own_sorted
        resid = np.empty(m)
        resid[order] = resid_sorted
        self.resid = resid


def _curves(snap: Snapshot, endpoint: str) -> _EndpointCurves:
    cache = snap.__dict__.setdefault("_curves_cache", {})
    if endpoint not in cache:
        cache[endpoint] = _EndpointCurves(snap, endpoint)
    return cache[endpoint]


def nelson_aalen(snap: Snapshot, endpoint: str) -> StepFunction:
    """Pooled cumulative-hazard estimate; tied events share a single jump."""
    c = _curves(snap, endpoint)
    return StepFunction(c.grid_times, np.cumsum(c.d_lambda))


def logrank(snap: Snapshot, endpoint: str) -> LogrankResult:
    """Calendar-time log-rank score and variance at this snapshot.

    The score is positive when arm 1 accumulates more events than its at-risk
    share predicts; an arm-1 benefit therefore pushes the standardized
    statistic negative, which is the rejection direction everywhere in this
    package.  Events with an empty at-risk group contribute zero (0/0 := 0).
    """
    return _curves(snap, endpoint).result


def group_share(snap: Snapshot, endpoint: str, arm: int) -> GroupShare:
    """Opposite-share curve ``1 - Y_arm/Y`` with its hazard integral."""
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm!r}")
    c = _curves(snap, endpoint)
    mu = c.mu1_grid if arm == 1 else c.mu0_grid
    psi = c.psi1 if arm == 1 else c.psi0
    return GroupShare(arm=arm, times=c.grid_times, mu=mu, psi=psi)


def _check_compatible(a: Snapshot, b: Snapshot) -> None:
    if a.n_ref != b.n_ref:
        raise InconsistentSnapshots(
            f"snapshots reference different cohort sizes ({a.n_ref} vs {b.n_ref})")
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    pos = np.searchsorted(large.index, small.index)
    if pos.size and (pos >= len(large.index)).any():
        raise InconsistentSnapshots("snapshot patient sets are not nested")
    if not (np.array_equal(large.index[pos], small.index)
            and np.array_equal(large.arm[pos], small.arm)
            and np.array_equal(large.entry[pos], small.entry)):
        raise InconsistentSnapshots("snapshots do not come from the same cohort")


def _scatter(values: np.ndarray, index: np.ndarray, n_ref: int) -> np.ndarray:
    out = np.zeros(n_ref)
    out[index] = values
    return out


def cross_covariance(snap_pfs: Snapshot, snap_os: Snapshot) -> float:
    """Covariance estimate between the PFS score at ``snap_pfs``'s time and
    the OS score at ``snap_os``'s time.

    Per-patient products of the two endpoint residuals are averaged over the
    reference cohort; patients absent from one snapshot contribute zero, so
    the value is 0 whenever either side has no events yet.
    """
    _check_compatible(snap_pfs, snap_os)
    r_pfs = _scatter(_curves(snap_pfs, PFS).resid, snap_pfs.index, snap_pfs.n_ref)
    r_os = _scatter(_curves(snap_os, OS).resid, snap_os.index, snap_os.n_ref)
    return float(r_pfs @ r_os) / snap_pfs.n_ref


@dataclass(frozen=True)
class CovarianceEstimate:
    """Joint 4x4 covariance of (PFS@t1, OS@t1, PFS@t2, OS@t2).

    Same-endpoint off-diagonal entries equal the earlier-time variance.
    ``corr`` is the derived correlation matrix with off-diagonal entries
    clamped to +/-0.9999 and, if the raw estimate is indefinite (possible in
    small samples because the entries come from two different estimators),
    projected onto the nearest positive-semidefinite correlation matrix.
    ``clamped`` records whether either adjustment fired.
    """

    matrix: np.ndarray
    corr: np.ndarray
    clamped: bool

    def correlation(self, i: int, j: int) -> float:
        return float(self.corr[i, j])


def covariance_matrix(snap_interim: Snapshot, snap_final: Snapshot) -> CovarianceEstimate:
    """Assemble the joint covariance of both endpoints at both analysis times.

    Args:
        snap_interim: snapshot at the earlier cutoff.
        snap_final: snapshot at the later cutoff, same cohort.

    Raises:
        InconsistentSnapshots: different cohorts or wrong time order.
        DegenerateVariance: some diagonal entry is 0, so no correlation exists.
    """
    if snap_interim.calendar_time > snap_final.calendar_time:
        raise InconsistentSnapshots("interim snapshot must not be later than final")
    _check_compatible(snap_interim, snap_final)

    v_p1 = logrank(snap_interim, PFS).var
    v_o1 = logrank(snap_interim, OS).var
    v_p2 = logrank(snap_final, PFS).var
    v_o2 = logrank(snap_final, OS).var
    c11 = cross_covariance(snap_interim, snap_interim)
    c12 = cross_covariance(snap_interim, snap_final)
    c21 = cross_covariance(snap_final, snap_interim)
    c22 = cross_covariance(snap_final, snap_final)

    m = np.array([
        [v_p1, c11, v_p1, c12],
        [c11, v_o1, c21, v_o1],
        [v_p1, c21, v_p2, c22],
        [c12, v_o1, c22, v_o2],
    ])

    diag = np.diag(m)
    if np.any(diag <= 0.0):
        raise DegenerateVariance(
            f"zero variance on the diagonal: {diag.tolist()}")
    scale = 1.0 / np.sqrt(diag)
    corr = m * scale[:, None] * scale[None, :]
    off = ~np.eye(4, dtype=bool)
    clamped = bool(np.any(np.abs(corr[off]) > CORRELATION_CLAMP))
    corr = corr.copy()
    corr[off] = np.clip(corr[off], -CORRELATION_CLAMP, CORRELATION_CLAMP)
    np.fill_diagonal(corr, 1.0)
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < 0.0:
        # indefinite estimate: clip the spectrum and restore unit diagonal;
        # principal submatrices of the result stay valid for the orthant code
        clamped = True
        vals = np.maximum(vals, 0.0)
        corr = (vecs * vals) @ vecs.T
        d = 1.0 / np.sqrt(np.diag(corr))
        corr = corr * d[:, None] * d[None, :]
        corr = 0.5 * (corr + corr.T)
        np.fill_diagonal(corr, 1.0)
    return CovarianceEstimate(matrix=m, corr=corr, clamped=clamped)
