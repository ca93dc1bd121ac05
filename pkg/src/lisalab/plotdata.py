"""Merge exported runs into plot-ready CSVs (and optionally render PNGs).

The merged loss grid uses the coarsest step stride among the inputs and
extends to the longest run; runs missing a grid point contribute an empty
cell (never an extrapolated value).  Norm columns are aligned by layer
index and padded likewise.  Rendering is optional and imports matplotlib
lazily, keeping the core free of plotting dependencies.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import ConfigError
from .instrument import import_run

MERGED_LOSS = "loss_merged.csv"
MERGED_NORMS = "norms_merged.csv"
WARNINGS_TXT = "warnings.txt"


def _run_name(path: Path, taken: set[str]) -> str:
    base = path.name or "run"
    name = base
    i = 2
    while name in taken:
        name = f"{base}_{i}"
        i += 1
    taken.add(name)
    return name


def merge_runs(run_dirs, outdir) -> Path:
    dirs = [Path(d) for d in run_dirs]
    if not dirs:
        raise ConfigError("plot-data needs at least one run directory")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    taken: set[str] = set()
    names, logs = [], []
    for d in dirs:
        names.append(_run_name(d, taken))
        logs.append(import_run(d))

    warnings: list[str] = []

    def stride(steps):
        diffs = [b - a for a, b in zip(steps, steps[1:])]
        return min(diffs) if diffs else 1

    with_steps = [log for log in logs if log.steps]
    if with_steps:
        strides = {stride(log.steps): None for log in with_steps}
        coarse = max(strides)
        if len(strides) > 1:
            warnings.append(
                f"step grids differ (strides {sorted(strides)}); "
                f"resampled to stride {coarse}"
            )
        start = min(log.steps[0] for log in with_steps)
        stop = max(log.steps[-1] for log in with_steps)
        grid = list(range(start, stop + 1, coarse))
        lookups = [dict(zip(log.steps, log.losses)) for log in logs]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step"] + [f"loss_{n}" for n in names])
        for s in grid:
            row = [s]
            for lut in lookups:
                v = lut.get(s)
                row.append("" if v is None else repr(v))
            writer.writerow(row)
        (out / MERGED_LOSS).write_text(buf.getvalue())

    reports = []
    for log in logs:
        reports.append(log.norm_report() if log.norm_series else None)
    max_layers = max((len(r.layer_names) for r in reports if r), default=0)
    if max_layers:
        named = next(r for r in reports if r)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["layer_index", "layer_name"] + [f"norm_{n}" for n in names]
        )
        for i in range(max_layers):
            layer_name = (
                named.layer_names[i] if i < len(named.layer_names) else f"layer{i}"
            )
            row = [i, layer_name]
            for r in reports:
                if r is None or i >= len(r.mean_norms):
                    row.append("")
                else:
                    row.append(repr(r.mean_norms[i]))
            writer.writerow(row)
        (out / MERGED_NORMS).write_text(buf.getvalue())

    if warnings:
        (out / WARNINGS_TXT).write_text("\n".join(warnings) + "\n")
    return out


def render_pngs(merged_dir) -> list[Path]:
    """Render reference PNGs from the merged CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    merged = Path(merged_dir)
    written = []
    loss_path = merged / MERGED_LOSS
    if loss_path.exists():
        with open(loss_path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        steps = [int(r[0]) for r in body]
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for col in range(1, len(header)):
            xs = [s for s, r in zip(steps, body) if r[col] != ""]
            ys = [float(r[col]) for r in body if r[col] != ""]
            ax.plot(xs, ys, label=header[col].removeprefix("loss_"))
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        ax.legend()
        fig.tight_layout()
        png = merged / "loss.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    norms_path = merged / MERGED_NORMS
    if norms_path.exists():
        with open(norms_path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        idx = [int(r[0]) for r in body]
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for col in range(2, len(header)):
            xs = [i for i, r in zip(idx, body) if r[col] != ""]
            ys = [float(r[col]) for r in body if r[col] != ""]
            ax.plot(xs, ys, marker="o", label=header[col].removeprefix("norm_"))
        ax.set_xlabel("layer index")
        ax.set_ylabel("mean weight norm")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        png = merged / "norms.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written
