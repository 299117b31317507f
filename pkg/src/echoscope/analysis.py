"""Offline analysis: RTT dependency regression, ROC scoring, plot-data export."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

# above this many residual degrees of freedom t-tests use the normal tail
NORMAL_APPROX_DF = 200

# jitter histogram bins carried in score logs (seconds)
Z_BINS = np.linspace(0.0, 400e-6, 41)


class UndefinedMetricError(ValueError):
    pass


# -- regression ----------------------------------------------------------------

@dataclass(frozen=True)
class RegressionReport:
    names: list
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    residual_error: float
    r_squared: float
    n: int
    dropped: list = field(default_factory=list)

    def most_significant(self) -> str:
        """Name of the non-intercept term with the largest |t|."""
        t = np.abs(self.t_values[1:])
        t = np.where(np.isnan(t), -1.0, t)
        return self.names[1 + int(np.argmax(t))]

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {"coef": float(self.coefficients[i]), "se": float(self.std_errors[i]),
                "t": float(self.t_values[i]), "p": float(self.p_values[i])}


def _two_sided_p(t: np.ndarray, df: int) -> np.ndarray:
    a = np.abs(t)
    if df > NORMAL_APPROX_DF:
        p = np.array([math.erfc(v / math.sqrt(2.0)) if np.isfinite(v) else 0.0 for v in a])
    else:
        from scipy.stats import t as student_t
        p = 2.0 * student_t.sf(a, df)
    return np.where(np.isnan(a), np.nan, np.clip(p, 0.0, 1.0))


def ols(design: np.ndarray, y, names: list, tol: float = 1e-10) -> RegressionReport:
    """Least squares with an intercept column prepended to ``design``.

    Columns that are linear combinations of earlier ones are dropped (and
    reported) instead of making the normal equations singular.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    full = np.column_stack([np.ones(n), design])
    all_names = ["(intercept)"] + list(names)
    keep: list[int] = []
    basis = np.zeros((n, 0))
    for j in range(full.shape[1]):
        col = full[:, j]
        resid = col - basis @ (basis.T @ col) if basis.shape[1] else col
        scale = np.linalg.norm(col)
        if scale > 0 and np.linalg.norm(resid) > tol * scale:
            keep.append(j)
            basis = np.column_stack([basis, resid / np.linalg.norm(resid)])
    dropped = [all_names[j] for j in range(full.shape[1]) if j not in keep]
    x = full[:, keep]
    q, r = np.linalg.qr(x)
    beta_k = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta_k
    df = n - len(keep)
    if df <= 0:
        raise ValueError("not enough observations for the number of descriptors")
    sse = float(resid @ resid)
    sigma2 = sse / df
    rinv = np.linalg.inv(r)
    se_k = np.sqrt(sigma2 * np.sum(rinv ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_k = np.where(se_k > 0, beta_k / np.where(se_k > 0, se_k, 1.0),
                       np.where(beta_k == 0, np.nan, np.sign(beta_k) * np.inf))
    p_k = _two_sided_p(t_k, df)

    m = full.shape[1]
    coef, se, t, p = (np.full(m, np.nan) for _ in range(4))
    coef[keep], se[keep], t[keep], p[keep] = beta_k, se_k, t_k, p_k
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    return RegressionReport(all_names, coef, se, t, p, math.sqrt(sigma2), r2, n, dropped)


def _lagged(X, Y, k: int) -> tuple[np.ndarray, np.ndarray]:
    if len(X) != len(Y):
        raise ValueError("X and Y must hold the same number of signals")
    if any(len(x) < k or len(y) < k for x, y in zip(X, Y)):
        raise ValueError(f"every signal needs at least {k} entries")
    design = np.array([np.asarray(x[:k], dtype=float) for x in X])
    target = np.array([float(y[k - 1]) for y in Y])
    return design, target


def rtt_dependency_regression(X, Y, k: int) -> RegressionReport:
    """Regress y[k] on x[1..k] (1-based) across signals."""
    design, target = _lagged(X, Y, k)
    return ols(design, target, [f"x[{i}]" for i in range(1, k + 1)])


def error_reduction(X, Y, k: int) -> float:
    """Relative drop in residual standard error from y[k] ~ x[k] to y[k] ~ x[1..k]."""
    design, target = _lagged(X, Y, k)
    single = ols(design[:, -1:], target, [f"x[{k}]"])
    full = ols(design, target, [f"x[{i}]" for i in range(1, k + 1)])
    if single.residual_error == 0:
        return 0.0
    return (single.residual_error - full.residual_error) / single.residual_error


# -- detection scoring --------------------------------------------------------

@dataclass(frozen=True)
class DetectionReport:
    auc: float
    eer: float
    tpr: float
    fpr: float
    accuracy: float
    precision: float
    threshold: float
    detection_delay: float | None = None


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties given their average rank."""
    order = np.argsort(values, kind="mergesort")
    sv = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_score(scores, labels) -> float:
    """Probability a positive outscores a negative (ties count half)."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(lab.sum()), int((~lab).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    r = _ranks(s)
    return float((r[lab].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def equal_error_rate(scores, labels) -> tuple[float, float]:
    """``(eer, threshold)``; alerts are ``score >= threshold``."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    if lab.all() or not lab.any():
        raise UndefinedMetricError("EER needs both classes")
    cands = np.concatenate([np.unique(s), [np.inf]])
    best = (math.inf, 0.0, cands[0])
    for th in cands:
        alert = s >= th
        fpr = float(alert[~lab].mean())
        fnr = float((~alert[lab]).mean())
        gap = abs(fpr - fnr)
        if gap < best[0]:
            best = (gap, 0.5 * (fpr + fnr), th)
    return best[1], float(best[2])


def score_run(scores, labels, threshold: float | None = None, times=None,
              alerts=None, onset: float | None = None) -> DetectionReport:
    """ROC summary of a labelled score sequence.

    ``threshold`` defaults to the EER operating point. The detection delay
    is the time from ``onset`` to the first alert at or after it, where
    alerts are ``alerts`` if given, else ``score >= threshold``.
    """
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    auc = auc_score(s, lab)
    eer, eer_th = equal_error_rate(s, lab)
    th = eer_th if threshold is None else threshold
    alert = s >= th
    tp = int((alert & lab).sum())
    fp = int((alert & ~lab).sum())
    tn = int((~alert & ~lab).sum())
    delay = None
    if times is not None and onset is not None:
        t = np.asarray(times, dtype=float)
        fired = np.asarray(alerts, dtype=bool) if alerts is not None else alert
        after = np.flatnonzero(fired & (t >= onset))
        delay = float(t[after[0]] - onset) if after.size else math.inf
    return DetectionReport(
        auc=auc, eer=eer, tpr=tp / lab.sum(), fpr=fp / (~lab).sum(),
        accuracy=(tp + tn) / s.size, precision=tp / (tp + fp) if tp + fp else 0.0,
        threshold=float(th), detection_delay=delay)


# -- logs and export -----------------------------------------------------------

def jitter_histogram(z) -> list[int]:
    """Counts of |z| per Z_BINS bin, last bin open-ended."""
    z = np.abs(np.asarray(z, dtype=float))
    counts, _ = np.histogram(np.clip(z, 0.0, Z_BINS[-1] * (1 - 1e-12)), bins=Z_BINS)
    return counts.tolist()


def read_log(path: str) -> tuple[list[dict], int]:
    """Parsed records of a line-delimited JSON log plus the count of bad lines."""
    records, bad = [], 0
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                bad += 1
                continue
            if not isinstance(rec, dict) or "t" not in rec or "rmse" not in rec:
                bad += 1
                continue
            records.append(rec)
    return records, bad


@dataclass(frozen=True)
class ExportSummary:
    files: list
    rows: int
    skipped: int


def _fmt(v) -> str:
    if v is None:
        return "NaN"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_report(log_path: str, out_dir: str) -> ExportSummary:
    """Writes gnuplot-ready column files next to each other in ``out_dir``.

    scores.dat    t probe host rmse windowed threshold alert windowed_alert attack onset
    features.dat  t probe host v_eh v_rtt_star v_jit attack
    jitter.dat    bin_lo_us bin_hi_us count_before count_after (before/after onset)
    """
    records, skipped = read_log(log_path)
    os.makedirs(out_dir, exist_ok=True)
    seen_onset: set = set()
    hist_pre = np.zeros(Z_BINS.size - 1, dtype=int)
    hist_post = np.zeros(Z_BINS.size - 1, dtype=int)
    paths = [os.path.join(out_dir, n) for n in ("scores.dat", "features.dat", "jitter.dat")]
    with open(paths[0], "w") as fs, open(paths[1], "w") as ff:
        fs.write("# t probe host rmse windowed threshold alert windowed_alert attack onset\n")
        ff.write("# t probe host v_eh v_rtt_star v_jit attack\n")
        for r in records:
            attack = bool(r.get("attack", False))
            onset = attack and r.get("host") not in seen_onset
            if onset:
                seen_onset.add(r.get("host"))
            fs.write(" ".join(_fmt(v) for v in (
                r["t"], r.get("probe"), r.get("host"), r["rmse"], r.get("windowed"),
                r.get("threshold"), bool(r.get("is_alert")), bool(r.get("windowed_alert")),
                attack, onset)) + "\n")
            feats = r.get("features") or [None, None, None]
            ff.write(" ".join(_fmt(v) for v in (r["t"], r.get("probe"), r.get("host"),
                                                *feats, attack)) + "\n")
            zh = r.get("z_hist")
            if zh is not None and len(zh) == hist_pre.size:
                (hist_post if attack else hist_pre)[:] += np.asarray(zh, dtype=int)
    with open(paths[2], "w") as fj:
        fj.write("# bin_lo_us bin_hi_us count_before count_after\n")
        for i in range(hist_pre.size):
            fj.write(f"{Z_BINS[i] * 1e6:g} {Z_BINS[i + 1] * 1e6:g} {hist_pre[i]} {hist_post[i]}\n")
    return ExportSummary(paths, len(records), skipped)


def summarize_log(log_path: str, window_field: str = "windowed_alert") -> dict:
    """Per-host detection metrics from a score log with ``attack`` labels."""
    records, skipped = read_log(log_path)
    out: dict = {"skipped": skipped, "hosts": {}}
    for host in sorted({r.get("host") for r in records}):
        rs = [r for r in records if r.get("host") == host and not r.get("grace")]
        lab = np.array([bool(r.get("attack", False)) for r in rs])
        s = np.array([r["rmse"] for r in rs])
        info: dict = {"probes": len(rs), "alerts": int(sum(r.get("is_alert", False) for r in rs)),
                      "false_alerts": int(sum(r.get("is_alert", False) for r, a in zip(rs, lab) if not a)),
                      "windowed_false_alerts": int(sum(r.get(window_field, False)
                                                       for r, a in zip(rs, lab) if not a))}
        if lab.any() and (~lab).any():
            onset = float(min(r["t"] for r, a in zip(rs, lab) if a))
            rep = score_run(s, lab, times=[r["t"] for r in rs],
                            alerts=[r.get("is_alert", False) for r in rs], onset=onset)
            info.update(auc=rep.auc, eer=rep.eer, detection_delay_s=rep.detection_delay)
        out["hosts"][host] = info
    return out
