"""Report rows, CSV round-trip, and the grouped-bar SVG chart."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .datasets import REGIMES

CSV_FIELDS = ("model", "regime", "mode", "accuracy", "n_train", "n_test", "seed", "runtime_s")
MODEL_ORDER = ("cnn", "lstm", "knn", "svm", "forest")
MODEL_COLORS = {"cnn": "#1f77b4", "lstm": "#ff7f0e", "knn": "#2ca02c", "svm": "#d62728",
                "forest": "#9467bd"}
# Headline accuracies of the original study; annotation only, never a test target.
REFERENCE_ACCURACY = {"cnn": 0.98, "lstm": 0.98, "knn": 0.75, "svm": 0.50}
CHANCE = 0.5


@dataclass(frozen=True)
class ReportRow:
    model: str
    regime: str
    mode: str
    accuracy: float
    n_train: int
    n_test: int
    seed: int
    runtime_s: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def write_report_csv(rows, path: Path | str) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([r.model, r.regime, r.mode, repr(float(r.accuracy)), r.n_train, r.n_test,
                        r.seed, f"{r.runtime_s:.3f}"])
    return path


def read_report_csv(path: Path | str) -> list[ReportRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"unexpected report header {reader.fieldnames}")
        return [ReportRow(d["model"], d["regime"], d["mode"], float(d["accuracy"]),
                          int(d["n_train"]), int(d["n_test"]), int(d["seed"]),
                          float(d["runtime_s"])) for d in reader]


# -- SVG ------------------------------------------------------------------------

WIDTH, HEIGHT = 900, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 130, 30, 60


def y_of(acc: float) -> float:
    """SVG y coordinate for an accuracy value."""
    return TOP + (1.0 - acc) * (HEIGHT - TOP - BOTTOM)


def render_svg(rows) -> str:
    rows = list(rows)
    regimes = [r for r in REGIMES if any(row.regime == r for row in rows)]
    regimes += sorted({row.regime for row in rows} - set(regimes))
    models = [m for m in MODEL_ORDER if any(row.model == m for row in rows)]
    models += sorted({row.model for row in rows} - set(models))
    plot_w = WIDTH - LEFT - RIGHT
    group_w = plot_w / max(len(regimes), 1)
    bar_w = group_w * 0.8 / max(len(models), 1)
    base = y_of(0.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(tick)
        out.append(f'<line class="grid" x1="{LEFT}" y1="{y}" x2="{LEFT + plot_w}" y2="{y}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4}" text-anchor="end">{tick:.2f}</text>')
    for gi, regime in enumerate(regimes):
        x0 = LEFT + gi * group_w + group_w * 0.1
        for mi, model in enumerate(models):
            match = [r for r in rows if r.regime == regime and r.model == model]
            if not match:
                continue
            acc = sum(r.accuracy for r in match) / len(match)
            y = y_of(acc)
            out.append(f'<rect class="bar" data-model="{escape(model)}" '
                       f'data-regime="{escape(regime)}" data-accuracy="{acc!r}" '
                       f'x="{x0 + mi * bar_w}" y="{y}" width="{bar_w}" height="{base - y}" '
                       f'fill="{MODEL_COLORS.get(model, "#777")}"/>')
        out.append(f'<text class="group-label" x="{LEFT + (gi + 0.5) * group_w}" '
                   f'y="{base + 18}" text-anchor="middle">{escape(regime)}</text>')
    cy = y_of(CHANCE)
    out.append(f'<line class="chance" x1="{LEFT}" y1="{cy}" x2="{LEFT + plot_w}" y2="{cy}" '
               f'stroke="black" stroke-width="1.5"/>')
    out.append(f'<line class="axis" x1="{LEFT}" y1="{base}" x2="{LEFT + plot_w}" y2="{base}" '
               f'stroke="black"/>')
    for mi, model in enumerate(models):
        ly = TOP + 18 * mi
        lx = LEFT + plot_w + 15
        out.append(f'<rect class="legend" x="{lx}" y="{ly}" width="12" height="12" '
                   f'fill="{MODEL_COLORS.get(model, "#777")}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly + 10}">{escape(model)}</text>')
    ref = ", ".join(f"{m} ~{a:.2f}" for m, a in REFERENCE_ACCURACY.items())
    out.append(f'<text class="reference" x="{LEFT}" y="{HEIGHT - 12}" fill="#555">'
               f'test accuracy; line = chance (0.5); original-study reference: {ref}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(rows, out_dir: Path | str) -> tuple[Path, Path]:
    rows = list(rows)
    if not rows:
        raise ValueError("no report rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_report_csv(rows, out_dir / "report.csv")
    svg_path = out_dir / "report.svg"
    svg_path.write_text(render_svg(rows), encoding="utf-8")
    return csv_path, svg_path


def rows_as_dicts(rows) -> list[dict]:
    return [asdict(r) for r in rows]
