# reporter.py

from pathlib import Path  # Path for path handling
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd  # Tables and CSV persistence

from state import EpochRecord, EvalReport

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]
GATE_ON = "✓"
GATE_OFF = "✗"


# === EvalReport ===

def eval_report_lines(report: EvalReport) -> List[str]:
    """
    Machine-readable key=value lines (stable format).

    pc is written as `pc=undefined` when the correlation is undefined.
    """
    pc = "undefined" if report.pc is None else f"{report.pc:.6f}"
    return [
        f"mae={report.mae:.6f}",
        f"rmse={report.rmse:.6f}",
        f"pc={pc}",
        f"n={report.n}",
        f"scale={report.scale}",
    ]


def parse_key_values(text: str) -> Dict[str, str]:
    """Parses key=value lines, ignoring everything else."""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if "=" in line and " " not in line:
            key, value = line.split("=", 1)
            values[key] = value
    return values


def format_eval_report(report: EvalReport, title: str = "Evaluation") -> str:
    """Aligned human-readable table followed by the key=value lines."""
    table = pd.DataFrame({
        "Metric": ["MAE", "RMSE", "PC", "N"],
        "Value": [f"{report.mae:.4f}", f"{report.rmse:.4f}",
                  "undefined" if report.pc is None else f"{report.pc:.4f}", str(report.n)],
    })
    lines = [f"--- [Reporter] {title} (scale {report.scale}) ---",
             table.to_string(index=False),
             ""]
    lines.extend(eval_report_lines(report))
    return "\n".join(lines)


# === Ablation table ===

def ablation_frame(rows: Sequence[dict]) -> pd.DataFrame:
    """
    Comparison table in ablation layout.

    Args:
        rows: dicts with keys variant, name, use_gate, use_pyramid, report (EvalReport)
    """
    records = []
    for row in rows:
        report: EvalReport = row["report"]
        records.append({
            "Variant": f"({row['variant']}) {row['name']}",
            "SSM Gate": GATE_ON if row["use_gate"] else GATE_OFF,
            "Feature Pyramid": GATE_ON if row["use_pyramid"] else GATE_OFF,
            "PC": "undefined" if report.pc is None else f"{report.pc:.4f}",
            "RMSE": f"{report.rmse:.4f}",
            "MAE": f"{report.mae:.4f}",
        })
    return pd.DataFrame.from_records(records, columns=["Variant", "SSM Gate", "Feature Pyramid", "PC", "RMSE", "MAE"])


def format_ablation_table(rows: Sequence[dict]) -> str:
    lines = ["--- [Reporter] Ablation study ---", ablation_frame(rows).to_string(index=False), ""]
    for row in rows:
        report: EvalReport = row["report"]
        prefix = f"variant_{row['variant']}"
        lines.extend(f"{prefix}.{line}" for line in eval_report_lines(report))
    return "\n".join(lines)


def write_ablation_csv(path: Union[str, Path], rows: Sequence[dict]) -> None:
    frame = pd.DataFrame.from_records([{
        "variant": row["variant"],
        "use_gate": bool(row["use_gate"]),
        "use_pyramid": bool(row["use_pyramid"]),
        "pc": row["report"].pc,
        "rmse": row["report"].rmse,
        "mae": row["report"].mae,
        "n": row["report"].n,
    } for row in rows])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


# === History ===

def write_history_csv(path: Union[str, Path], history: Sequence[EpochRecord]) -> None:
    """Writes epoch,train_loss,val_loss,lr with round-trip float precision."""
    frame = pd.DataFrame.from_records([dict(row) for row in history], columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_history_csv(path: Union[str, Path]) -> List[EpochRecord]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [EpochRecord(epoch=int(r.epoch), train_loss=float(r.train_loss),
                        val_loss=float(r.val_loss), lr=float(r.lr))
            for r in frame.itertuples(index=False)]


def plot_history(path: Union[str, Path], history: Sequence[EpochRecord]) -> Optional[Path]:
    """
    Saves a two-panel PNG (losses, learning rate). Returns None when there is
    nothing to plot.
    """
    if not history:
        return None
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    frame = pd.DataFrame.from_records([dict(row) for row in history], columns=HISTORY_COLUMNS)
    fig, (ax_loss, ax_lr) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(frame["epoch"], frame["train_loss"], label="train")
    ax_loss.plot(frame["epoch"], frame["val_loss"], label="val")
    ax_loss.set_ylabel("MSE (normalized)")
    ax_loss.set_yscale("log")
    ax_loss.legend()
    ax_lr.step(frame["epoch"], frame["lr"], where="post")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("epoch")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


# === Parameters ===

def format_parameter_breakdown(total: int, breakdown: Dict[str, int]) -> str:
    frame = pd.DataFrame({"Module": list(breakdown), "Parameters": list(breakdown.values())})
    lines = ["--- [Model] Parameter breakdown ---", frame.to_string(index=False), f"Total: {total:,}"]
    return "\n".join(lines)


def gate_statistics_lines(stats: Dict[str, Optional[float]]) -> List[str]:
    """gate.<stage>.<block>=mean gate value, or "off" for an ungated block."""
    return [f"gate.{name}=off" if value is None else f"gate.{name}={value:.6f}"
            for name, value in stats.items()]


def format_gradcheck_report(results: Dict[str, float], tolerance: float) -> str:
    frame = pd.DataFrame({
        "Group": list(results),
        "Max rel err": [f"{v:.3e}" for v in results.values()],
        "Status": ["ok" if v < tolerance else "FAIL" for v in results.values()],
    })
    return "\n".join([f"--- [Gradcheck] tolerance {tolerance:g} ---", frame.to_string(index=False)])
