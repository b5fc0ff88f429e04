"""Report serialisation: JSON, a flat CSV table and a self-contained SVG chart."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List
from xml.sax.saxutils import escape

from .analysis import FINGER_TRIO, REFERENCE_RMS_N, Report
from .errors import FormatError
from .synth import FINGERS

REPORT_SCHEMA = "nailforce.report"
CSV_HEADER = ("section", "condition", "quantity", "finger", "component", "value", "sd", "U", "p")


def report_to_dict(report: Report) -> dict:
    trials = {}
    for cond, stats in report.conditions.items():
        trials[cond] = [{
            "trial_id": s.trial_id,
            "boundaries": dict(s.boundaries._asdict()),
            "hold_means": s.hold_means,
            "shares": s.shares,
            "balance": s.balance,
            "steadiness": s.steadiness,
            "equilibrium_gap": s.equilibrium_gap,
            "rms": s.rms,
        } for s in stats]
    tests = [{
        "quantity": t.quantity, "finger": t.finger, "component": t.component,
        "condition_a": t.condition_a, "condition_b": t.condition_b,
        "U": t.U, "p": t.p, "mode": t.mode, "significant": t.significant,
    } for t in report.tests]
    return {"schema": REPORT_SCHEMA, "version": 1, "summary": report.summary,
            "trials": trials, "tests": tests, "reference_rms_n": REFERENCE_RMS_N}


def _csv_rows(doc: dict) -> List[list]:
    rows = []
    for cond, summ in doc["summary"].items():
        for f, comps in summ["hold_means"].items():
            for c, ms in comps.items():
                rows.append(["summary", cond, "hold_mean", f, c, ms["mean"], ms["sd"], "", ""])
        for c, per in summ["shares"].items():
            for f, ms in per.items():
                rows.append(["summary", cond, "share_pct", f, c, ms["mean"], ms["sd"], "", ""])
        for c, ms in summ["balance"].items():
            rows.append(["summary", cond, "balance", "all", c, ms["mean"], ms["sd"], "", ""])
        for f, comps in summ["steadiness"].items():
            for c, ms in comps.items():
                rows.append(["summary", cond, "steadiness", f, c, ms["mean"], ms["sd"], "", ""])
        for c, g in summ["equilibrium_gap"].items():
            rows.append(["summary", cond, "equilibrium_gap_pct", "total", c, g["mean"], "", "", ""])
        for f, ms in summ["rms"].items():
            rows.append(["summary", cond, "rms", f, "combined", ms["mean"], ms["sd"], "", ""])
    for t in doc["tests"]:
        cond = t["condition_a"] if t["condition_a"] == t["condition_b"] else \
            f"{t['condition_a']}|{t['condition_b']}"
        rows.append(["test", cond, t["quantity"], t["finger"], t["component"], "", "", t["U"], t["p"]])
    return rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def write_csv(doc: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for row in _csv_rows(doc):
            wr.writerow([_fmt(v) for v in row])


PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def _bar_panel(x0, y0, w, h, title, groups, series, values, errors, unit):
    """One grouped bar chart; ``values[s][g]`` and ``errors[s][g]``."""
    out = [f'<g transform="translate({x0},{y0})">',
           f'<text x="{w / 2:.1f}" y="14" text-anchor="middle" font-size="13">{escape(title)}</text>']
    top = max((values[s][g] + errors[s][g] for s in range(len(series)) for g in range(len(groups))),
              default=1.0)
    top = top if top > 0 else 1.0
    plot_h = h - 50
    base = 25 + plot_h
    out.append(f'<line x1="40" y1="{base}" x2="{w - 5}" y2="{base}" stroke="#000"/>')
    out.append(f'<line x1="40" y1="25" x2="40" y2="{base}" stroke="#000"/>')
    out.append(f'<text x="36" y="29" text-anchor="end" font-size="9">{top:.3g}</text>')
    out.append(f'<text x="36" y="{base}" text-anchor="end" font-size="9">0</text>')
    out.append(f'<text x="4" y="{25 + plot_h / 2:.1f}" font-size="9">{escape(unit)}</text>')
    gw = (w - 50) / max(len(groups), 1)
    bw = gw * 0.8 / max(len(series), 1)
    for g, gname in enumerate(groups):
        gx = 45 + g * gw
        for s in range(len(series)):
            v, e = values[s][g], errors[s][g]
            bh = plot_h * max(v, 0.0) / top
            bx = gx + s * bw
            out.append(f'<rect x="{bx:.1f}" y="{base - bh:.1f}" width="{bw * 0.9:.1f}" '
                       f'height="{bh:.1f}" fill="{PALETTE[s % len(PALETTE)]}"/>')
            cx = bx + bw * 0.45
            y_hi = base - plot_h * (v + e) / top
            y_lo = base - plot_h * max(v - e, 0.0) / top
            out.append(f'<line x1="{cx:.1f}" y1="{y_hi:.1f}" x2="{cx:.1f}" y2="{y_lo:.1f}" stroke="#000"/>')
        out.append(f'<text x="{gx + gw * 0.4:.1f}" y="{base + 14}" text-anchor="middle" '
                   f'font-size="10">{escape(gname)}</text>')
    out.append("</g>")
    return out


def render_svg(doc: dict) -> str:
    conds = list(doc["summary"])
    panels = []
    for comp in ("normal", "shear"):
        fingers = [f for f in FINGERS if all(f in doc["summary"][c]["hold_means"] for c in conds)]
        vals = [[doc["summary"][c]["hold_means"][f][comp]["mean"] for f in fingers] for c in conds]
        errs = [[doc["summary"][c]["hold_means"][f][comp]["sd"] for f in fingers] for c in conds]
        panels.append((f"hold mean ({comp})", fingers, vals, errs, "N"))
        vals = [[doc["summary"][c]["shares"][comp][f]["mean"] for f in FINGER_TRIO] for c in conds]
        errs = [[doc["summary"][c]["shares"][comp][f]["sd"] for f in FINGER_TRIO] for c in conds]
        panels.append((f"share ({comp})", list(FINGER_TRIO), vals, errs, "%"))
        vals = [[doc["summary"][c]["steadiness"][f][comp]["mean"] for f in fingers] for c in conds]
        errs = [[doc["summary"][c]["steadiness"][f][comp]["sd"] for f in fingers] for c in conds]
        panels.append((f"steadiness ({comp})", fingers, vals, errs, "N^2"))
    vals = [[doc["summary"][c]["balance"][k]["mean"] for k in ("normal", "shear")] for c in conds]
    errs = [[doc["summary"][c]["balance"][k]["sd"] for k in ("normal", "shear")] for c in conds]
    panels.append(("balance", ["normal", "shear"], vals, errs, "N^2"))

    pw, ph, cols = 320, 220, 3
    rows = (len(panels) + cols - 1) // cols
    width, height = pw * cols, ph * rows + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
           f'<rect width="{width}" height="{height}" fill="#fff"/>']
    for i, c in enumerate(conds):
        out.append(f'<rect x="{10 + 150 * i}" y="8" width="12" height="12" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{26 + 150 * i}" y="18" font-size="11">{escape(c)}</text>')
    for k, (title, groups, vals, errs, unit) in enumerate(panels):
        out.extend(_bar_panel(pw * (k % cols), 30 + ph * (k // cols), pw, ph,
                              title, groups, conds, vals, errs, unit))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report_or_doc, out_dir) -> Dict[str, Path]:
    """Write ``report.json``, ``report.csv`` and ``report.svg`` into ``out_dir``."""
    doc = report_or_doc if isinstance(report_or_doc, dict) else report_to_dict(report_or_doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv", "svg": out / "report.svg"}
    # insertion order is deterministic and keeps finger order on reload
    with open(paths["json"], "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    write_csv(doc, paths["csv"])
    paths["svg"].write_text(render_svg(doc))
    return paths


def load_report(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != REPORT_SCHEMA:
        raise FormatError(f"{path}: not a report file")
    return doc
