"""Evaluation reports: delimited output plus rendered figures.

Every report path writes three files side by side: `<name>.csv` (the
data), `<name>.txt` (an aligned table), and `<name>.png` (a matplotlib
figure).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed report column order
ABLATION_COLUMNS = ("kind", "fid_toy", "tag_fidelity", "color_bleed", "params",
                    "seed", "checkpoint", "note")
CURRICULUM_COLUMNS = ("arm", "seed", "tag_fidelity", "color_bleed")


@dataclass
class AblationRow:
    kind: str
    seed: int
    fid_toy: float
    tag_fidelity: float
    color_bleed: float
    params: int
    checkpoint: str
    note: str = ""


@dataclass
class CurriculumRow:
    arm: str
    seed: int
    tag_fidelity: float
    color_bleed: float


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([getattr(row, c) for c in columns])
    return buf.getvalue()


def _table_text(rows, columns) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[fmt(getattr(r, c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    rows: list[AblationRow]
    schedule_hash: str

    def to_csv(self) -> str:
        return _csv_text(self.rows, ABLATION_COLUMNS)

    def to_text(self) -> str:
        header = f"schedule_hash: {self.schedule_hash}\n"
        return header + _table_text(self.rows, ABLATION_COLUMNS)

    def save(self, out_dir: str | Path, name: str = "ablation") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{name}.csv", "txt": out / f"{name}.txt",
                 "png": out / f"{name}.png"}
        paths["csv"].write_text(self.to_csv())
        paths["txt"].write_text(self.to_text())
        self.render_figure(paths["png"])
        return paths

    def render_figure(self, path: str | Path) -> None:
        ok = [r for r in self.rows if r.params >= 0]
        kinds = [r.kind for r in ok]
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
        axes[0].bar(kinds, [r.fid_toy for r in ok], color="#4878cf")
        axes[0].set_title("FID (toy extractor)")
        axes[1].bar(kinds, [r.params for r in ok], color="#6acc65")
        axes[1].set_title("trainable parameters")
        axes[2].bar(kinds, [r.tag_fidelity for r in ok], color="#d65f5f",
                    label="tag fidelity")
        axes[2].bar(kinds, [r.color_bleed for r in ok], color="#956cb4",
                    alpha=0.7, label="color bleed")
        axes[2].set_ylim(0, 1)
        axes[2].legend(fontsize=8)
        axes[2].set_title("color metrics")
        for ax in axes:
            ax.tick_params(axis="x", rotation=45, labelsize=8)
        fig.suptitle(f"decoder-block ablation ({self.schedule_hash})", fontsize=10)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


@dataclass
class CurriculumReport:
    rows: list[CurriculumRow]
    two_step_bleeds_less: bool
    schedule_hash: str

    def to_csv(self) -> str:
        return _csv_text(self.rows, CURRICULUM_COLUMNS)

    def to_text(self) -> str:
        verdict = "observed" if self.two_step_bleeds_less else "not observed"
        header = (f"schedule_hash: {self.schedule_hash}\n"
                  f"direction 'two-step bleeds less': {verdict}\n")
        return header + _table_text(self.rows, CURRICULUM_COLUMNS)

    def save(self, out_dir: str | Path, name: str = "curricula") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{name}.csv", "txt": out / f"{name}.txt",
                 "png": out / f"{name}.png"}
        paths["csv"].write_text(self.to_csv())
        paths["txt"].write_text(self.to_text())
        self.render_figure(paths["png"])
        return paths

    def render_figure(self, path: str | Path) -> None:
        seeds = sorted({r.seed for r in self.rows})
        arms = ("two_step", "single_step")
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
        width = 0.35
        xs = range(len(seeds))
        for metric, ax in zip(("color_bleed", "tag_fidelity"), axes):
            for j, arm in enumerate(arms):
                vals = [next(getattr(r, metric) for r in self.rows
                             if r.seed == s and r.arm == arm) for s in seeds]
                ax.bar([x + (j - 0.5) * width for x in xs], vals, width,
                       label=arm)
            ax.set_xticks(list(xs))
            ax.set_xticklabels([f"seed {s}" for s in seeds])
            ax.set_title(metric)
            ax.legend(fontsize=8)
        verdict = ("observed" if self.two_step_bleeds_less else "not observed")
        fig.suptitle(f"curriculum comparison: two-step bleeds less {verdict}",
                     fontsize=10)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def save_loss_curves(runlog, path: str | Path) -> None:
    """Per-iteration loss curves with step-transition markers."""
    records = runlog.records
    if not records:
        return
    its = [r.iteration for r in records]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    axes[0].plot(its, [r.l_rec for r in records], lw=0.8)
    axes[0].set_title("reconstruction L1")
    axes[0].set_yscale("log")
    axes[1].plot(its, [r.l_adv for r in records], lw=0.8)
    axes[1].set_title("adversarial")
    axes[2].plot(its, [r.l_cls for r in records], lw=0.8)
    axes[2].set_title("tag classification")
    steps = [r.step for r in records]
    for ax in axes:
        for i in range(1, len(steps)):
            if steps[i] != steps[i - 1]:
                ax.axvline(its[i], color="gray", ls="--", lw=0.8)
        ax.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_records(metrics: dict, out_dir: str | Path,
                        name: str = "metrics") -> dict[str, Path]:
    """One-row metric report: csv + txt + bar figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    @dataclass
    class Row:
        metric: str
        value: float

    rows = [Row(metric=k, value=float(v)) for k, v in metrics.items()]
    paths = {"csv": out / f"{name}.csv", "txt": out / f"{name}.txt",
             "png": out / f"{name}.png"}
    paths["csv"].write_text(_csv_text(rows, ("metric", "value")))
    paths["txt"].write_text(_table_text(rows, ("metric", "value")))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar([r.metric for r in rows], [r.value for r in rows], color="#4878cf")
    ax.tick_params(axis="x", rotation=30, labelsize=8)
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths
