"""Static figures: training curves, MAE vs identity accuracy, Bland-Altman, BVP overlay."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import LOA_Z  # noqa: E402
from .trainer import TrainHistory  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_history(history_csv, out_dir) -> list[Path]:
    h = TrainHistory.from_csv(history_csv)
    out_dir = Path(out_dir)
    ep = h.column("epoch")
    written = []

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for key in ("loss", "bvp_term", "hr_term", "id_term"):
        axes[0].plot(ep, h.column(key), label=key)
    axes[0].set_xlabel("epoch")
    axes[0].set_title("loss terms")
    axes[0].legend(fontsize=8)
    for key in ("sigma1", "sigma2", "sigma3"):
        axes[1].semilogy(ep, h.column(key), label=key)
    axes[1].set_xlabel("epoch")
    axes[1].set_title("task uncertainties")
    axes[1].legend(fontsize=8)
    axes[2].plot(ep, h.column("mae"), label="train MAE")
    val = h.column("val_mae")
    ok = np.isfinite(val)
    axes[2].plot(ep[ok], val[ok], "o-", label="val MAE")
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("bpm")
    axes[2].legend(fontsize=8)
    written.append(_save(fig, out_dir / "training_curves.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ep, h.column("mae"), color="tab:red", label="HR MAE (train)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE (bpm)", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(ep, 100 * h.column("id_acc"), color="tab:blue", label="identity accuracy (train)")
    acc = h.column("val_id_acc")
    ok = np.isfinite(acc)
    ax2.plot(ep[ok], 100 * acc[ok], "o", color="tab:blue", alpha=0.6)
    ax2.set_ylabel("accuracy (%)", color="tab:blue")
    ax.set_title("HR MAE vs identity accuracy")
    written.append(_save(fig, out_dir / "mae_vs_accuracy.png"))
    return written


def plot_eval(eval_dir, out_dir, max_overlays: int = 4) -> list[Path]:
    eval_dir, out_dir = Path(eval_dir), Path(out_dir)
    written = []
    ba_path = eval_dir / "bland_altman.json"
    if ba_path.is_file():
        ba = json.loads(ba_path.read_text())
        if ba.get("points"):
            pts = np.array(ba["points"], dtype=np.float64)
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.scatter(pts[:, 0], pts[:, 1], s=14)
            ax.axhline(ba["mean_diff"], color="k")
            for v in (ba["loa_lo"], ba["loa_hi"]):
                ax.axhline(v, color="k", ls="--")
            ax.set_xlabel("(pred + gt) / 2  (bpm)")
            ax.set_ylabel("pred - gt  (bpm)")
            ax.set_title(f"Bland-Altman, mean {ba['mean_diff']:.2f}, +/-{LOA_Z:.2f} SD = {ba['half_width']:.2f}")
            written.append(_save(fig, out_dir / "bland_altman.png"))

    traces = sorted((eval_dir / "bvp").glob("*.csv"))[:max_overlays]
    if traces:
        fig, axes = plt.subplots(len(traces), 1, figsize=(9, 2.2 * len(traces)), squeeze=False)
        for ax, path in zip(axes[:, 0], traces):
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            t = np.array([float(r["t_seconds"]) for r in rows])
            pred = np.array([float(r["bvp_pred"]) for r in rows])
            ax.plot(t, _unit(pred), label="predicted")
            if rows and rows[0]["bvp_gt"] != "":
                gt = np.array([float(r["bvp_gt"]) for r in rows])
                ax.plot(t, _unit(gt), label="ground truth", alpha=0.7)
            ax.set_title(path.stem, fontsize=8)
            ax.legend(fontsize=7, loc="upper right")
        axes[-1, 0].set_xlabel("time (s)")
        written.append(_save(fig, out_dir / "bvp_overlay.png"))
    return written


def _unit(x):
    x = x - x.mean()
    s = x.std()
    return x / s if s > 0 else x
