"""Monte-Carlo engine: threshold calibration and Pd / RMSE / cos_est curves.

Trials are grouped in fixed-size chunks keyed by trial index.  Each trial
draws its white noise from its own derived seed, so the output of a run is
independent of how many worker threads process the chunks; reductions are
folds over trial-indexed arrays.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .array_model import PointingState, coupled_steering, exact_basis
from .detectors import BatchEvaluator
from .errors import CalibrationUnderpowered, NoValidTrials
from .estimator import MMConfig, whitening_matrix
from .numkernel import hermitian_sqrt
from .scenario import amplitude_for_sinr, build_covariance, derive_seed, white_noise

STREAM_CALIBRATION = 0
STREAM_CURVES = 1
STREAM_HOLDOUT = 2

CHUNK = 8192

CSV_COLUMNS = ("detector", "sinr_db", "pd", "rmse_du", "rmse_db", "cos_est",
               "n_trials", "excluded_trials")


@dataclass(frozen=True)
class TrialSetup:
    """Everything a trial needs besides its seed.

    ``u0`` is the true target direction; benchmark detectors that assume
    a known bearing use it, and H1 data are synthesized there.
    """

    env: object
    pointing: PointingState
    mm: MMConfig
    u0: float
    phase: float = 0.0

    @property
    def delta_u(self):
        return self.u0 - self.pointing.u_bar

    def covariance(self):
        return build_covariance(self.env)

    def evaluator(self, kinds):
        return BatchEvaluator(kinds, self.env.geometry, self.pointing, self.mm,
                              self.env.k_secondary, self.u0, self.env.coupling)


@dataclass
class ThresholdTable:
    pfa: float
    entries: dict
    n_trials: int
    master_seed: int

    def __post_init__(self):
        if not 0 < self.pfa < 1:
            raise ValueError("pfa must lie in (0, 1)")
        if self.n_trials < min_calibration_trials(self.pfa):
            raise CalibrationUnderpowered(
                f"{self.n_trials} trials < 100/pfa = {min_calibration_trials(self.pfa)}")

    def __getitem__(self, label):
        return self.entries[label]

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(float(d["pfa"]), {k: float(v) for k, v in d["entries"].items()},
                   int(d["n_trials"]), int(d["master_seed"]))


@dataclass(frozen=True)
class CurvePoint:
    detector: str
    sinr_db: float
    pd: float
    rmse_du: float
    rmse_db: float
    cos_est: float
    n_trials: int
    excluded_trials: int = 0


def min_calibration_trials(pfa):
    return math.ceil(100 / pfa - 1e-9)


def threshold_from_samples(samples, pfa):
    """Upper order statistic at 1-based rank ``ceil((1 - pfa) n)``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    rank = math.ceil((1 - pfa) * n - 1e-9)
    return float(x[min(max(rank, 1), n) - 1])


def binomial_interval(n, p, confidence=0.99):
    """Central binomial interval on the count of successes."""
    lo, hi = stats.binom.interval(confidence, n, p)
    return int(lo), int(hi)


def _chunks(n_trials, size=None):
    size = size or CHUNK
    return [np.arange(s, min(s + size, n_trials)) for s in range(0, n_trials, size)]


def _map_chunks(fn, chunks, threads):
    if threads is None or threads == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    workers = None if threads == 0 else threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def trial_noise(setup, m_sqrt, master_seed, stream, trials):
    """Colored noise ``(B, K+1, N)``: row 0 is the primary snapshot."""
    n = setup.env.geometry.n_elements
    rows = setup.env.k_secondary + 1
    white = np.stack([white_noise(derive_seed(master_seed, stream, t), rows, n)
                      for t in trials])
    return white @ m_sqrt.T


def simulate_statistics(kinds, setup, n_trials, master_seed, stream=STREAM_CALIBRATION,
                        threads=1):
    """H0 statistics of every detector, ``{label: (n_trials,) array}``."""
    kinds = list(kinds)
    ev = setup.evaluator(kinds)
    m_sqrt = hermitian_sqrt(setup.covariance())

    def run(trials):
        z = trial_noise(setup, m_sqrt, master_seed, stream, trials)
        prep = ev.prepare(whitening_matrix(z[:, 1:]))
        res = ev.evaluate(prep, z[:, 0])
        return {k.label: res[k.label].statistic for k in kinds}

    parts = _map_chunks(run, _chunks(n_trials), threads)
    return {k.label: np.concatenate([p[k.label] for p in parts]) for k in kinds}


def calibrate_thresholds(kinds, setup, pfa, n_trials, master_seed, threads=1):
    if n_trials < min_calibration_trials(pfa):
        raise CalibrationUnderpowered(
            f"{n_trials} trials < 100/pfa = {min_calibration_trials(pfa)}")
    samples = simulate_statistics(kinds, setup, n_trials, master_seed,
                                  STREAM_CALIBRATION, threads)
    entries = {label: threshold_from_samples(x, pfa) for label, x in samples.items()}
    return ThresholdTable(pfa, entries, n_trials, master_seed)


def calibrate_threshold(kind, setup, pfa, n_trials, master_seed, threads=1):
    """Threshold of a single detector at false-alarm probability ``pfa``."""
    if n_trials * pfa < 50:
        raise CalibrationUnderpowered(f"n_trials * pfa = {n_trials * pfa} < 50")
    samples = simulate_statistics([kind], setup, n_trials, master_seed,
                                  STREAM_CALIBRATION, threads)
    return threshold_from_samples(samples[kind.label], pfa)


def measure_false_alarms(kinds, setup, table, n_trials, master_seed, threads=1):
    """False-alarm counts on the hold-out stream, ``{label: count}``."""
    samples = simulate_statistics(kinds, setup, n_trials, master_seed, STREAM_HOLDOUT, threads)
    return {label: int(np.sum(x > table[label])) for label, x in samples.items()}


def cos_est_terms(m_inv, pm_true, geometry, u_bar, delta_u_hat, b_hat):
    """Per-trial whitened cosine similarity; NaN where ``b_hat[0]`` is degenerate.

    ``b_hat`` has shape (B, P); the estimated steering vector is
    ``C_hat p(u_bar + du)`` with ``C_hat`` built from ``b_hat / b_hat[0]``.
    """
    b_hat = np.atleast_2d(np.asarray(b_hat, dtype=complex))
    delta_u_hat = np.atleast_1d(np.asarray(delta_u_hat, dtype=float))
    lead = b_hat[:, 0]
    ok = np.abs(lead) >= 1e-10 * np.linalg.norm(b_hat, axis=1)
    c = np.where(ok[:, None], b_hat / np.where(ok, lead, 1.0)[:, None], 0.0)
    d, _ = exact_basis(geometry, u_bar + delta_u_hat, b_hat.shape[1])
    p_hat = (d @ c[..., None])[..., 0]
    q = m_inv @ pm_true
    num = np.abs(p_hat @ np.conj(q))
    den_true = np.real(np.vdot(pm_true, q))
    den_hat = np.real(np.einsum("bi,ij,bj->b", np.conj(p_hat), m_inv, p_hat))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / np.sqrt(den_true * den_hat)
    return np.where(ok, np.minimum(out, 1.0), np.nan)


def cos_est_metric(m, u0, true_profile, estimates, geometry, u_bar):
    """Average whitened cosine similarity over ``estimates`` = [(du_hat, b_hat), ...].

    Trials whose ``b_hat[0]`` is degenerate are excluded.
    """
    if not estimates:
        raise NoValidTrials("no estimates supplied")
    m_inv = np.linalg.inv(m)
    pm = coupled_steering(geometry, true_profile, u0)
    vals = []
    for du, b in estimates:
        vals.append(cos_est_terms(m_inv, pm, geometry, u_bar, [du], [b])[0])
    vals = np.asarray(vals)
    if np.all(np.isnan(vals)):
        raise NoValidTrials("every trial had a degenerate amplitude estimate")
    return float(np.nanmean(vals))


def run_curves(kinds, setup, sinr_grid_db, thresholds, n_mc, master_seed, threads=1):
    """Pd, RMSE and cos_est versus SINR for every detector.

    All detectors see the same snapshots within a trial, and the noise of
    trial ``t`` is shared by every SINR point (only the echo amplitude
    changes).  With ``thresholds=None`` only the estimation metrics are
    produced and ``pd`` is NaN.  Returns ``{label: [CurvePoint, ...]}``.
    """
    kinds = list(kinds)
    if thresholds is not None:
        missing = [k.label for k in kinds if k.label not in thresholds.entries]
        if missing:
            raise KeyError(f"no threshold for {missing}")
    env = setup.env
    m = setup.covariance()
    m_sqrt = hermitian_sqrt(m)
    m_inv = np.linalg.inv(m)
    pm = coupled_steering(env.geometry, env.coupling, setup.u0)
    amps = [amplitude_for_sinr(s, m, pm, setup.phase) for s in sinr_grid_db]
    ev = setup.evaluator(kinds)
    u_bar = setup.pointing.u_bar

    def run(trials):
        z = trial_noise(setup, m_sqrt, master_seed, STREAM_CURVES, trials)
        prep = ev.prepare(whitening_matrix(z[:, 1:]))
        out = {}
        for j, a in enumerate(amps):
            res = ev.evaluate(prep, z[:, 0] + a * pm)
            for k in kinds:
                r = res[k.label]
                if thresholds is None:
                    hit = np.zeros(len(trials), dtype=bool)
                else:
                    hit = r.statistic > thresholds[k.label]
                if k.estimates_bearing:
                    err = (r.delta_u - setup.delta_u) ** 2
                    cos = cos_est_terms(m_inv, pm, env.geometry, u_bar, r.delta_u, r.b_hat)
                else:
                    err = cos = np.full(len(trials), np.nan)
                out[k.label, j] = (hit, err, cos)
        return out

    parts = _map_chunks(run, _chunks(n_mc), threads)
    curves = {}
    for k in kinds:
        pts = []
        for j, s in enumerate(sinr_grid_db):
            hit = np.concatenate([p[k.label, j][0] for p in parts])
            err = np.concatenate([p[k.label, j][1] for p in parts])
            cos = np.concatenate([p[k.label, j][2] for p in parts])
            if k.estimates_bearing:
                rmse = float(np.sqrt(np.mean(err)))
                rmse_db = 20 * math.log10(rmse) if rmse > 0 else -math.inf
                excluded = int(np.sum(np.isnan(cos)))
                cos_v = float(np.nanmean(cos)) if excluded < cos.size else math.nan
            else:
                rmse = rmse_db = cos_v = math.nan
                excluded = 0
            pd = float(np.mean(hit)) if thresholds is not None else math.nan
            pts.append(CurvePoint(k.label, float(s), pd, rmse, rmse_db,
                                  cos_v, int(n_mc), excluded))
        curves[k.label] = pts
    return curves


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_curves_csv(path, curves):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for pts in curves.values():
            for p in pts:
                w.writerow([_fmt(getattr(p, c)) for c in CSV_COLUMNS])


def read_curves_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return rows
