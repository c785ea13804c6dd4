import csv
import json
import logging
import math
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from tvclt.errors import ReportIOError  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["sequence", "n", "j_max", "feller", "m_n", "tv_bound", "tv_actual",
               "k_actual", "slack_ratio"]

# fixed ids and no timestamp so SVG output is reproducible
plot_params = {
    'svg.hashsalt': 'tvclt',
    'svg.fonttype': 'none',
    'figure.figsize': [5.0, 3.4],
    'axes.labelsize': 10,
    'font.size': 9,
    'legend.fontsize': 8,
    'lines.linewidth': 1.2,
    'lines.markersize': 4,
}


def case_to_dict(case):
    return {
        'sequence': case.sequence,
        'n': case.n,
        'j_values': list(case.j_values),
        'j_max': case.j_max,
        'feller': case.feller,
        'm_n': case.m_n,
        'tv_bound': case.tv_bound,
        'tv_actual': case.tv_actual,
        'k_actual': case.k_actual,
        'slack': case.slack,
        'slack_ratio': case.slack_ratio,
        'intermediate_bound': case.intermediate_bound,
        'reason': case.reason.value,
        'bound_holds': case.bound_holds,
    }


def report_to_dict(report):
    """Everything serializable on a RunReport; timing is left out."""
    return {
        'version': report.version,
        'config': report.config,
        'ok': report.ok,
        'cases': [case_to_dict(c) for c in report.cases],
        'failures': [{'sequence': f.sequence, 'n': f.n, 'check': f.check, 'error': f.error,
                      'message': f.message} for f in report.failures],
        'identities': report.identities,
        'lindeberg': report.lindeberg,
        'feller': report.feller,
        'cor1': report.cor1,
        'smoothing': report.smoothing,
        'perturbation': report.perturbation,
        'rates': report.rates,
    }


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(report, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for case in report.cases:
            writer.writerow([_cell(getattr(case, col)) for col in CSV_COLUMNS])
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(report, path):
    text = json.dumps(report_to_dict(report), indent=2, allow_nan=True, default=_json_default)
    Path(path).write_text(text + "\n")
    return path


def load_report(path):
    """Read back a JSON report as a plain dict."""
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ReportIOError(f"cannot read {path}: {e.strerror}")


def _positive(values):
    return [v if v is not None and math.isfinite(v) and v > 0 else float('nan') for v in values]


def plot_tv_decay(report, sequence, path):
    cases = [c for c in report.cases if c.sequence == sequence]
    if not cases:
        return None
    ns = [c.n for c in cases]
    with plt.rc_context(plot_params):
        fig, ax = plt.subplots()
        ax.loglog(ns, _positive([c.tv_actual for c in cases]), 'o-', label="d_TV actual")
        ax.loglog(ns, _positive([c.tv_bound for c in cases]), 's--', label="bound")
        steps = [c.intermediate_bound for c in cases]
        if any(s is not None for s in steps):
            ax.loglog(ns, _positive(steps), '^:', label="intermediate bound")
        ax.set_xlabel("n")
        ax.set_ylabel("total variation")
        ax.set_title(sequence)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return path


def plot_lindeberg(report, sequence, path):
    rows = report.lindeberg.get(sequence)
    if not rows:
        return None
    with plt.rc_context(plot_params):
        fig, ax = plt.subplots()
        for row in rows:
            ax.loglog(row['eps'], _positive(row['values']), label=f"n={row['n']}")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("L_n(epsilon)")
        ax.set_title(sequence)
        ax.legend(ncol=2)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return path


def emit(report, formats, out_dir, name="tvclt"):
    """Write the requested formats under out_dir; returns the written paths."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if 'csv' in formats:
            written.append(write_csv(report, out_dir / f"{name}.csv"))
        if 'json' in formats:
            written.append(write_json(report, out_dir / f"{name}.json"))
        if 'svg' in formats:
            sequences = sorted({c.sequence for c in report.cases} | set(report.lindeberg))
            for seq in sequences:
                for path in (plot_tv_decay(report, seq, out_dir / f"{seq}_tv_decay.svg"),
                             plot_lindeberg(report, seq, out_dir / f"{seq}_lindeberg.svg")):
                    if path is not None:
                        written.append(path)
    except OSError as e:
        raise ReportIOError(f"cannot write to {out_dir}: {e.strerror or e}")
    for path in written:
        logger.debug("wrote %s", path)
    return written
