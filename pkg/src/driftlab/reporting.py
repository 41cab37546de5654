"""Regenerate tables and figures from previously written series CSVs.

Report generation is a pure function of the series files: rerunning it
on the same directory reproduces the same tables.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .evaluation import EvalSeries, report_tables

_SERIES_RE = re.compile(r"^(?P<scenario>.+)_(?P<name>[a-z0-9_]+)_(?P<phase>insample|oos)_series\.csv$")


def read_series_csv(path) -> tuple[EvalSeries, str | None]:
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                header = line[1:].strip()
                continue
            if line.startswith("j,"):
                continue
            if line:
                rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"{path}: not a series CSV")
    return EvalSeries(t=arr[:, 1], mean=arr[:, 2], q10=arr[:, 3],
                      q50=arr[:, 4], q90=arr[:, 5]), header


def regenerate_report(in_dir: Path, out_dir: Path) -> list[Path]:
    """Rebuild final tables and figures from every series CSV found."""
    from .figures import plot_error_series

    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios: dict[str, dict[str, dict[str, EvalSeries]]] = {}
    headers: dict[str, str] = {}
    order: dict[str, list[str]] = {}
    for path in sorted(in_dir.glob("*_series.csv")):
        match = _SERIES_RE.match(path.name)
        if not match:
            continue
        scenario = match.group("scenario")
        name = match.group("name")
        phase = match.group("phase")
        series, header = read_series_csv(path)
        scenarios.setdefault(scenario, {}).setdefault(phase, {})[name] = series
        if header:
            headers[scenario] = header
        order.setdefault(scenario, [])
        if name not in order[scenario]:
            order[scenario].append(name)

    written: list[Path] = []
    for scenario, phases in scenarios.items():
        finals = {phase: {n: s.final for n, s in by_est.items()}
                  for phase, by_est in phases.items()}
        csv_lines, text_lines = report_tables(finals, order[scenario])
        head = f"# {headers[scenario]}\n" if scenario in headers else ""
        csv_path = out_dir / f"{scenario}_final_table.csv"
        csv_path.write_text(head + "\n".join(csv_lines) + "\n")
        txt_path = out_dir / f"{scenario}_final_table.txt"
        txt_path.write_text("\n".join(text_lines) + "\n")
        written.extend([csv_path, txt_path])
        for phase, by_est in phases.items():
            fig_path = out_dir / f"{scenario}_{phase}_series.png"
            plot_error_series(by_est, f"{scenario} {phase}", fig_path)
            written.append(fig_path)
    if not written:
        raise FileNotFoundError(f"no series CSVs found in {in_dir}")
    return written
