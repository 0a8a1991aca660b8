"""Delimited outputs, PGM heatmaps and report figures.

Subcommands emit CSV and 8-bit binary PGM files; the report bundler collects
those artifacts into one directory, renders matplotlib figures next to them
and writes an index describing everything.  PNGs are written without
software metadata so identical inputs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import shutil
from pathlib import Path
from typing import Sequence

import numpy as np

_FIG_METADATA = {"Software": None}


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def csv_text(fieldnames: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in fieldnames})
    return buf.getvalue()


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    Path(path).write_text(csv_text(fieldnames, rows), encoding="utf-8")


def json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path, payload) -> None:
    Path(path).write_text(json_text(payload), encoding="utf-8")


def write_pgm(path, grid: np.ndarray) -> None:
    """Min-max scaled 8-bit binary PGM plus a JSON sidecar with the scaling."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("PGM export needs a 2-d grid")
    lo, hi = float(grid.min()), float(grid.max())
    span = hi - lo
    scaled = np.zeros_like(grid) if span == 0.0 else (grid - lo) / span
    data = np.round(scaled * 255.0).astype(np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))
    write_json(str(path) + ".json", {
        "min": lo, "max": hi, "height": h, "width": w, "maxval": 255,
    })


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w)
    return data.reshape(h, w)


# -- figures --------------------------------------------------------------------


def render_energy_figure(mean_energy: np.ndarray, edges: np.ndarray,
                         bin_energy: np.ndarray, asymmetry: np.ndarray,
                         out_path) -> None:
    plt = _plt()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 4))
    h, w = mean_energy.shape
    extent = (-(w - 1) / 2 - 0.5, (w - 1) / 2 + 0.5,
              -(h - 1) / 2 - 0.5, (h - 1) / 2 + 0.5)
    im = ax0.imshow(mean_energy, origin="upper", extent=extent, cmap="viridis")
    ax0.set_title("mean energy")
    ax0.set_xlabel("x")
    ax0.set_ylabel("y")
    fig.colorbar(im, ax=ax0, fraction=0.046)
    centers = (edges[:-1] + edges[1:]) / 2.0
    ax1.plot(centers, bin_energy, "o-", label="mean energy")
    ax1.set_xlabel("radius")
    ax1.set_ylabel("energy")
    ax1t = ax1.twinx()
    ax1t.plot(centers, asymmetry, "s--", color="tab:red", label="asymmetry")
    ax1t.set_ylabel("sector asymmetry")
    ax1.set_title("radial profile")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


def render_angular_figure(rows: Sequence[dict], out_path) -> None:
    """Polar arrows: per-class mean match angle, arrow length = resultant."""
    plt = _plt()
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="polar")
    cmap = plt.get_cmap("tab10")
    for i, row in enumerate(rows):
        theta_deg = row.get("theta_mean_deg")
        if theta_deg is None or (isinstance(theta_deg, float) and math.isnan(theta_deg)):
            continue
        theta = math.radians(float(theta_deg))
        r = float(row["resultant_length"])
        ax.annotate("", xy=(theta, r), xytext=(0.0, 0.0),
                    arrowprops={"arrowstyle": "-|>", "color": cmap(i % 10)})
        ax.text(theta, min(r + 0.08, 1.05), str(row["class_id"]),
                color=cmap(i % 10), ha="center")
    ax.set_rmax(1.1)
    ax.set_title("per-class match direction (arrow length = R)")
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


def render_match_scatter(rows: Sequence[dict], out_path) -> None:
    """Scatter of match locations in the image plane, colored by query class."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 5))
    cmap = plt.get_cmap("tab10")
    by_class: dict[int, list[tuple[float, float]]] = {}
    for row in rows:
        by_class.setdefault(int(row["query_class_id"]), []).append(
            (float(row["x_nn"]), float(row["y_nn"])))
    rng = np.random.default_rng(0)  # fixed jitter so repeated renders agree
    for i, class_id in enumerate(sorted(by_class)):
        pts = np.asarray(by_class[class_id], dtype=np.float64)
        jitter = rng.uniform(-0.25, 0.25, pts.shape)
        ax.scatter(pts[:, 0] + jitter[:, 0], pts[:, 1] + jitter[:, 1],
                   s=6, alpha=0.35, color=cmap(i % 10), label=f"class {class_id}")
    ax.axhline(0, color="gray", lw=0.5)
    ax.axvline(0, color="gray", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title("match locations")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


def render_training_curves(metrics: Sequence[dict], out_path) -> None:
    plt = _plt()
    epochs = [int(m["epoch"]) for m in metrics]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    axes[0].plot(epochs, [float(m["loss"]) for m in metrics], label="total")
    axes[0].plot(epochs, [float(m["ce"]) for m in metrics], label="cross-entropy")
    axes[0].plot(epochs, [float(m["u1"]) for m in metrics], label="circle term")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(fontsize=7)
    axes[1].plot(epochs, [float(m["accuracy"]) for m in metrics], color="tab:green")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("train accuracy")
    axes[1].set_ylim(0, 1.02)
    axes[2].plot(epochs, [float(m["lr"]) for m in metrics], color="tab:purple")
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


def render_ablation_figure(table: Sequence[dict], out_path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    kinds = [row["kind"] for row in table]
    means = [float(row["mean"]) for row in table]
    stds = [float(row["std"]) for row in table]
    ax.bar(range(len(kinds)), means, yerr=stds, capsize=4, color="tab:blue")
    ax.set_xticks(range(len(kinds)))
    ax.set_xticklabels(kinds, rotation=15)
    ax.set_ylabel("test accuracy")
    ax.set_title("label configuration comparison")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


def render_heatmap_figure(grid: np.ndarray, title: str, out_path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.4, 4))
    im = ax.imshow(grid, origin="upper", cmap="magma")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)


# -- bundling --------------------------------------------------------------------


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def build_report(inputs: Sequence[Path], out_dir: Path) -> dict:
    """Copy recognized artifacts into out_dir, render figures, write an index.

    Recognized inputs: radial profile / angular / metrics / ablation /
    match CSVs by filename, plus any PGM heatmap (rendered to PNG via its
    sidecar scaling).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []

    def register(path: Path, kind: str, rendered: str | None = None):
        entries.append({"file": path.name, "kind": kind,
                        **({"figure": rendered} if rendered else {})})

    for src_dir in inputs:
        src_dir = Path(src_dir)
        for path in sorted(src_dir.rglob("*")):
            if not path.is_file():
                continue
            name = path.name
            dest = out_dir / name
            if name.endswith(".pgm"):
                shutil.copyfile(path, dest)
                sidecar = Path(str(path) + ".json")
                if sidecar.exists():
                    shutil.copyfile(sidecar, out_dir / sidecar.name)
                fig_name = name[:-4] + ".png"
                render_heatmap_figure(read_pgm(path), name[:-4], out_dir / fig_name)
                register(dest, "heatmap", fig_name)
            elif name == "radial_profile.csv":
                shutil.copyfile(path, dest)
                rows = _read_csv(path)
                fig_name = "radial_profile.png"
                _render_profile_from_rows(rows, out_dir / fig_name)
                register(dest, "radial_profile", fig_name)
            elif name == "angular_stats.csv":
                shutil.copyfile(path, dest)
                fig_name = "angular_stats.png"
                render_angular_figure(_read_csv(path), out_dir / fig_name)
                register(dest, "angular_stats", fig_name)
            elif name == "matches.csv":
                shutil.copyfile(path, dest)
                fig_name = "matches.png"
                render_match_scatter(_read_csv(path), out_dir / fig_name)
                register(dest, "matches", fig_name)
            elif name == "metrics.csv":
                shutil.copyfile(path, dest)
                fig_name = "training_curves.png"
                render_training_curves(_read_csv(path), out_dir / fig_name)
                register(dest, "training_metrics", fig_name)
            elif name == "ablation.csv":
                shutil.copyfile(path, dest)
                fig_name = "ablation.png"
                render_ablation_figure(_read_csv(path), out_dir / fig_name)
                register(dest, "ablation", fig_name)
            elif name.endswith((".csv", ".json")) and not name.endswith(".pgm.json"):
                shutil.copyfile(path, dest)
                register(dest, "data")
    index = {"artifacts": entries}
    write_json(out_dir / "index.json", index)
    return index


def _render_profile_from_rows(rows: Sequence[dict], out_path) -> None:
    edges = np.asarray([float(r["edge_lo"]) for r in rows] +
                       [float(rows[-1]["edge_hi"])])
    energy = np.asarray([float(r["mean_energy"]) if r["mean_energy"] else np.nan
                         for r in rows])
    asym = np.asarray([float(r["asymmetry"]) if r["asymmetry"] else np.nan
                       for r in rows])
    plt = _plt()
    fig, ax1 = plt.subplots(figsize=(5.5, 3.6))
    centers = (edges[:-1] + edges[1:]) / 2.0
    ax1.plot(centers, energy, "o-", label="mean energy")
    ax1.set_xlabel("radius")
    ax1.set_ylabel("energy")
    ax2 = ax1.twinx()
    ax2.plot(centers, asym, "s--", color="tab:red")
    ax2.set_ylabel("sector asymmetry")
    ax1.set_title("radial profile")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata=_FIG_METADATA)
    plt.close(fig)
