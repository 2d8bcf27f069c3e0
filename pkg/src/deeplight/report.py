"""Collate pipeline outputs into one directory: copied CSV metrics, PGM
slice exports, and rendered PNG figures (map heatmaps, metric curves)."""

import csv
import os
import shutil

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

from .volio import read_vol1  # noqa: E402

_PNG_META = {"Software": "deeplight"}   # pins the only varying PNG chunk
_MAP_PREFIXES = ("group_state-", "glm_group_state-", "lasso_state-",
                 "searchlight")


def write_pgm(path, image):
    """8-bit binary grayscale, min-max scaled; non-finite pixels go black."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"pgm wants a 2D image, got shape {arr.shape}")
    finite = np.isfinite(arr)
    out = np.zeros(arr.shape, dtype=np.uint8)
    if finite.any():
        lo = arr[finite].min()
        hi = arr[finite].max()
        span = hi - lo if hi > lo else 1.0
        scaled = np.clip((arr - lo) / span * 255.0, 0.0, 255.0)
        out[finite] = np.round(scaled[finite]).astype(np.uint8)
    h, w = out.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(out.tobytes())


def _render_map(vol_path, out_dir, stem):
    data = read_vol1(vol_path).data[0]
    mid = data[:, :, data.shape[2] // 2]
    write_pgm(os.path.join(out_dir, stem + ".pgm"), mid)
    fig, ax = plt.subplots(figsize=(4, 4))
    shown = np.ma.masked_invalid(mid.T)
    im = ax.imshow(shown, origin="lower", cmap="hot")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(stem)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(os.path.join(out_dir, stem + ".png"), metadata=_PNG_META)
    plt.close(fig)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _plot_series(out_path, series, xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, xs, ys in series:
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1 or series and series[0][0]:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, metadata=_PNG_META)
    plt.close(fig)


def _render_curves(csv_path, out_dir, stem):
    header, rows = _read_csv(csv_path)
    if not rows:
        return
    if header[:2] == ["offset", "accuracy"]:
        xs = [int(r[0]) for r in rows]
        ys = [float(r[1]) for r in rows]
        _plot_series(os.path.join(out_dir, stem + ".png"),
                     [("", xs, ys)], "TR offset in block", "accuracy",
                     "decoding accuracy over the block")
    elif header[:3] == ["state", "offset", "f1"]:
        by_state = {}
        for state, offset, f1 in rows:
            if f1 == "":
                continue
            by_state.setdefault(state, []).append((int(offset), float(f1)))
        series = [(f"state {s}", [x for x, _ in pts], [y for _, y in pts])
                  for s, pts in sorted(by_state.items())]
        if series:
            _plot_series(os.path.join(out_dir, stem + ".png"), series,
                         "TR offset in block", "F1",
                         "map overlap over the block")
    elif header[:1] == ["epoch"]:
        xs = [int(r[0]) for r in rows]
        cols = {name: [float(r[i]) for r in rows]
                for i, name in enumerate(header) if i}
        _plot_series(os.path.join(out_dir, stem + "_loss.png"),
                     [("train", xs, cols["train_loss"]),
                      ("validation", xs, cols["val_loss"])],
                     "epoch", "cross-entropy", "training loss")
        _plot_series(os.path.join(out_dir, stem + "_accuracy.png"),
                     [("train", xs, cols["train_acc"]),
                      ("validation", xs, cols["val_acc"])],
                     "epoch", "accuracy", "training accuracy")


def build_report(data_dirs, out_dir):
    """Copy every CSV, render every known map/curve, and index it all."""
    os.makedirs(out_dir, exist_ok=True)
    summary = []
    for d in data_dirs:
        if not os.path.isdir(d):
            raise FileNotFoundError(d)
        tag = os.path.basename(os.path.normpath(d))
        for name in sorted(os.listdir(d)):
            path = os.path.join(d, name)
            stem = f"{tag}_{os.path.splitext(name)[0]}"
            if name.endswith(".csv"):
                shutil.copyfile(path, os.path.join(out_dir, stem + ".csv"))
                _, rows = _read_csv(path)
                summary.append((tag, name, len(rows)))
                _render_curves(path, out_dir, stem)
            elif name.endswith(".vol") and name.startswith(_MAP_PREFIXES):
                _render_map(path, out_dir, stem)
                summary.append((tag, name, 1))
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "artifact", "rows"])
        w.writerows(summary)
