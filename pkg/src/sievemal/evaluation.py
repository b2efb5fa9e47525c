"""ROC computation, fixed-FPR operating points, composite pipeline curves,
rule performance tables and detection-rate-vs-payload summaries.

No interpolation anywhere: every reported point is an empirical operating
point reachable by an actual threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabels


@dataclass(frozen=True)
class RocCurve:
    """Stepwise curve; thresholds strictly decreasing, tied scores collapsed."""
    points: tuple  # ((fpr, tpr, threshold), ...)

    def auc(self) -> float:
        fpr = [p[0] for p in self.points]
        tpr = [p[1] for p in self.points]
        return float(np.trapezoid(tpr, fpr))


def roc(scores, labels) -> RocCurve:
    """Sort-and-sweep ROC; tied scores produce a single diagonal step."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("both classes are required for a ROC curve")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += int(y[j] == 1)
            fp += int(y[j] == 0)
            j += 1
        points.append((fp / n_neg, tp / n_pos, float(s[i])))
        i = j
    return RocCurve(points=tuple(points))


def tpr_at_fpr(curve: RocCurve, target_fpr: float):
    """Conservative operating point: maximal achievable fpr <= target."""
    best = None
    for fpr, tpr, thr in curve.points:
        if fpr <= target_fpr:
            if best is None or (fpr, tpr) >= (best[0], best[1]):
                best = (fpr, tpr, thr)
    _, tpr, thr = best
    return tpr, thr


def composite_roc(system, samples) -> RocCurve:
    """Pipeline ROC: rule verdicts fix TPR/FPR offsets, the ML threshold sweeps.

    samples: iterable of (raw_bytes, label). Allowlisted malware is undetectable
    at every threshold; the minimum-FPR point sits at the blocklist's goodware
    fire rate (the horizontal-floor phenomenon).
    """
    m_total = g_total = 0
    m_rules = f_rules = 0
    ml_scores = []
    ml_labels = []
    for raw, label in samples:
        if label == 1:
            m_total += 1
        else:
            g_total += 1
        stage, score, _ = system.stage(raw)
        if stage == "allowlist":
            continue  # permanent negative
        if stage == "blocklist":
            if label == 1:
                m_rules += 1
            else:
                f_rules += 1
            continue
        ml_scores.append(1.0 if score is None else float(score))  # failed extraction => positive
        ml_labels.append(label)
    if m_total == 0 or g_total == 0:
        raise DegenerateLabels("both classes are required for a composite ROC")

    ml_scores = np.asarray(ml_scores)
    ml_labels = np.asarray(ml_labels)
    points = [(f_rules / g_total, m_rules / m_total, float("inf"))]
    order = np.argsort(-ml_scores, kind="stable")
    s = ml_scores[order]
    y = ml_labels[order]
    tp, fp = m_rules, f_rules
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += int(y[j] == 1)
            fp += int(y[j] == 0)
            j += 1
        points.append((fp / g_total, tp / m_total, float(s[i])))
        i = j
    return RocCurve(points=tuple(points))


@dataclass
class RuleStats:
    """Per-split rule fire counts; allowlist hits count as true negatives."""
    counts: dict = field(default_factory=dict)

    def _split(self, epoch):
        return self.counts.setdefault(epoch, {
            "malware_total": 0, "goodware_total": 0,
            "blocklist_malware": 0, "blocklist_goodware": 0,
            "allowlist_malware": 0, "allowlist_goodware": 0,
        })

    def tpr(self, epoch) -> float:
        c = self.counts[epoch]
        return c["blocklist_malware"] / c["malware_total"] if c["malware_total"] else 0.0

    def fpr(self, epoch) -> float:
        c = self.counts[epoch]
        return c["blocklist_goodware"] / c["goodware_total"] if c["goodware_total"] else 0.0

    def to_dict(self) -> dict:
        out = {}
        for epoch in sorted(self.counts):
            out[epoch] = dict(self.counts[epoch])
            out[epoch]["tpr"] = self.tpr(epoch)
            out[epoch]["fpr"] = self.fpr(epoch)
        return out


def rule_stats(samples, allow, block) -> RuleStats:
    """Exact counting per split; samples provide .path, .label, .epoch.

    Precedence matches the pipeline: a sample matched by the allowlist never
    reaches the blocklist.
    """
    from .rules.engine import scan  # local import keeps module deps one-way

    stats = RuleStats()
    for sample in samples:
        with open(sample.path, "rb") as fh:
            raw = fh.read()
        c = stats._split(sample.epoch)
        key = "malware" if sample.label == 1 else "goodware"
        c[f"{key}_total"] += 1
        if allow is not None and len(allow.rules) and scan(raw, allow).verdict:
            c[f"allowlist_{key}"] += 1
            continue
        if block is not None and len(block.rules) and scan(raw, block).verdict:
            c[f"blocklist_{key}"] += 1
    return stats


def detection_rate_curve(results, threshold: float):
    """Detection rate per payload bucket at a fixed precalibrated threshold.

    results: iterable of (payload_kb, score); rate = fraction with score >= threshold.
    Returns a list of (payload_kb, rate) sorted by payload size.
    """
    buckets = {}
    for kb, score in results:
        total, hit = buckets.get(kb, (0, 0))
        buckets[kb] = (total + 1, hit + (1 if score >= threshold else 0))
    return [(kb, hit / total) for kb, (total, hit) in sorted(buckets.items())]


# --- report emission ---------------------------------------------------------

def curve_rows(curve: RocCurve) -> list:
    return [[p[0], p[1], p[2]] for p in curve.points]


def write_report(path, report: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve_files(stem, curves: dict):
    """Tabular curve data plus a gnuplot script (no rendered images)."""
    data_paths = []
    for name, curve in sorted(curves.items()):
        data_path = f"{stem}.{name}.dat"
        with open(data_path, "w", encoding="utf-8") as fh:
            fh.write("# fpr tpr threshold\n")
            for fpr, tpr, thr in curve.points:
                fh.write(f"{fpr!r} {tpr!r} {thr!r}\n")
        data_paths.append((name, data_path))
    script = f"{stem}.gnuplot"
    with open(script, "w", encoding="utf-8") as fh:
        fh.write("set xlabel 'FPR'\nset ylabel 'TPR'\nset logscale x\nset key bottom right\n")
        plots = ", ".join(f"'{p}' using 1:2 with steps title '{n}'" for n, p in data_paths)
        fh.write(f"plot {plots}\n")
    return script
