"""K-fold paired comparison of two model/training configurations.

Trains both systems on identical folds with fold-specific seeds, collects
paired F1/recall, and runs the paired t-test, the exact Wilcoxon
signed-rank test, and paired Cohen's d on each metric.
"""

from dataclasses import dataclass, field

import numpy as np

from .arch import build_model
from .metrics import metrics_from_confusion
from .stats import cohens_d_paired, paired_t_test, wilcoxon_signed_rank_exact
from .train import evaluate, train, model_rng

__all__ = ["FoldResults", "crossval_compare", "render_comparison"]


@dataclass
class FoldResults:
    name_a: str
    name_b: str
    f1_a: list = field(default_factory=list)
    f1_b: list = field(default_factory=list)
    recall_a: list = field(default_factory=list)
    recall_b: list = field(default_factory=list)

    def paired(self, metric):
        if metric == "f1":
            return np.array(self.f1_a), np.array(self.f1_b)
        if metric == "recall":
            return np.array(self.recall_a), np.array(self.recall_b)
        raise ValueError(f"unknown metric {metric!r}")


def _stats_block(a, b):
    t = paired_t_test(b, a)          # positive = system B better
    w = wilcoxon_signed_rank_exact(b, a)
    d = cohens_d_paired(b, a)
    return {
        "mean_a": float(np.mean(a)), "mean_b": float(np.mean(b)),
        "t": t.statistic, "p_t": t.p_value, "t_degenerate": t.degenerate,
        "wilcoxon_w": w.statistic, "p_wilcoxon": w.p_value,
        "wilcoxon_degenerate": w.degenerate,
        "cohens_d": d.statistic, "d_degenerate": d.degenerate,
    }


def crossval_compare(arch_a, arch_b, config_a, config_b, fold_sources, base_seed=0):
    """Train A and B on each (train_src, val_src) fold; return paired results.

    Fold i trains with seed base_seed + i for both systems, so the pairing
    is honest: identical data, identical sampling, different architecture
    or training strategy only.
    """
    results = FoldResults(getattr(arch_a, "name", str(arch_a)),
                          getattr(arch_b, "name", str(arch_b)))
    per_fold = []
    for i, (train_src, val_src) in enumerate(fold_sources):
        seed = base_seed + i
        row = {"fold": i, "seed": seed}
        for tag, arch, cfg in (("a", arch_a, config_a), ("b", arch_b, config_b)):
            import copy
            cfg_i = copy.deepcopy(cfg)
            cfg_i.seed = seed
            model = build_model(arch, rng=model_rng(seed))
            train(model, train_src, val_src, cfg_i)
            cm, _, _ = evaluate(model, val_src, cfg_i.batch_size)
            m = metrics_from_confusion(cm)
            row[f"f1_{tag}"] = m.f1 if m.f1 is not None else 0.0
            row[f"recall_{tag}"] = m.recall if m.recall is not None else 0.0
        results.f1_a.append(row["f1_a"])
        results.f1_b.append(row["f1_b"])
        results.recall_a.append(row["recall_a"])
        results.recall_b.append(row["recall_b"])
        per_fold.append(row)
    report = {
        "system_a": results.name_a,
        "system_b": results.name_b,
        "folds": per_fold,
        "stats": {
            "f1": _stats_block(*[np.array(v) for v in (results.f1_a, results.f1_b)]),
            "recall": _stats_block(*[np.array(v) for v in
                                     (results.recall_a, results.recall_b)]),
        },
    }
    return results, report


def render_comparison(report):
    """Plain-text table of the fold results and the three statistics."""
    lines = [f"paired comparison: A={report['system_a']}  B={report['system_b']}",
             f"{'fold':>4} {'F1(A)':>8} {'F1(B)':>8} {'rec(A)':>8} {'rec(B)':>8}"]
    for row in report["folds"]:
        lines.append(f"{row['fold']:>4} {row['f1_a']:>8.4f} {row['f1_b']:>8.4f} "
                     f"{row['recall_a']:>8.4f} {row['recall_b']:>8.4f}")
    for metric in ("f1", "recall"):
        s = report["stats"][metric]
        t = "degenerate" if s["t_degenerate"] else f"t={s['t']:.4f} p={s['p_t']:.4f}"
        w = "degenerate" if s["wilcoxon_degenerate"] else \
            f"W={s['wilcoxon_w']:.1f} p={s['p_wilcoxon']:.4f}"
        d = "degenerate" if s["d_degenerate"] else f"d={s['cohens_d']:.3f}"
        lines.append(f"{metric}: mean A {s['mean_a']:.4f} vs B {s['mean_b']:.4f} | "
                     f"paired t: {t} | exact Wilcoxon: {w} | Cohen's {d}")
    return "\n".join(lines)
