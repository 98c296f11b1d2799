"""
Output Writer for Interpretable Bandit Bench
CSV tables and SVG figures written asynchronously with retry on transient errors
"""

import asyncio
import io
import logging
import os
from typing import List, Sequence

import aiofiles
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
from tenacity import (
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential
)

from config import Config
from errors import BenchIOError, InputError
from harness import AGGREGATE_COLUMNS, ResultsTable

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "bandit-bench"
plt.rcParams["svg.fonttype"] = "none"

SERIES = {
    "regret": ("regret_mean", "regret_se", "Cumulative regret"),
    "interpretability": ("q_mean", "q_se", "Cumulative model uncertainty"),
}


class OutputWriter:
    """Writes experiment tables and figures to an output directory"""

    @staticmethod
    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=0.2, min=0.2, max=2),
        retry=retry_if_exception_type((BlockingIOError, InterruptedError, TimeoutError)),
        reraise=True
    )
    async def write_text(path: str, text: str) -> str:
        """Write a text file, retrying transient OS errors"""
        async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
            await f.write(text)
        logger.info("Wrote %s (%d bytes)", path, len(text))
        return path

    @staticmethod
    def csv_text(frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False, lineterminator="\n")

    @staticmethod
    def render_svg(aggregate: pd.DataFrame, algorithms: Sequence[str], series: str) -> str:
        """Mean curve with a standard-error band per algorithm"""
        mean_col, se_col, ylabel = SERIES[series]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            plotted = 0
            for name in algorithms:
                rows = aggregate[aggregate["algorithm"] == name]
                if rows.empty:
                    logger.warning("No aggregate rows for %s; omitting it from %s plot", name, series)
                    continue
                x = rows["round"].to_numpy(dtype=float)
                mean = rows[mean_col].to_numpy(dtype=float)
                se = rows[se_col].to_numpy(dtype=float)
                line, = ax.plot(x, mean, label=name, linewidth=1.5)
                ax.fill_between(x, mean - se, mean + se, color=line.get_color(), alpha=0.2, linewidth=0)
                plotted += 1

            ax.set_xlabel("Round n")
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
            if plotted:
                ax.legend(loc="upper left", frameon=False)
            fig.tight_layout()

            buffer = io.StringIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
            return buffer.getvalue()
        finally:
            plt.close(fig)

    @staticmethod
    def prepare_dir(outdir: str):
        try:
            os.makedirs(outdir, exist_ok=True)
        except OSError as e:
            logger.exception("Cannot create output directory")
            raise BenchIOError(f"cannot create output directory {outdir}: {e}")
        if not os.access(outdir, os.W_OK):
            raise BenchIOError(f"output directory is not writable: {outdir}")

    @staticmethod
    async def write_all(files: List[tuple]) -> List[str]:
        try:
            return list(await asyncio.gather(*(OutputWriter.write_text(p, t) for p, t in files)))
        except OSError as e:
            logger.exception("Error writing outputs")
            raise BenchIOError(f"cannot write outputs: {e}")


async def emit_outputs_async(table: ResultsTable, outdir: str) -> List[str]:
    if table.raw.empty:
        raise InputError("results table is empty; nothing to write")
    OutputWriter.prepare_dir(outdir)
    files = [
        (os.path.join(outdir, Config.RAW_CSV), OutputWriter.csv_text(table.raw)),
        (os.path.join(outdir, Config.AGGREGATE_CSV), OutputWriter.csv_text(table.aggregate)),
        (os.path.join(outdir, Config.REGRET_SVG),
         OutputWriter.render_svg(table.aggregate, table.algorithms, "regret")),
        (os.path.join(outdir, Config.INTERPRETABILITY_SVG),
         OutputWriter.render_svg(table.aggregate, table.algorithms, "interpretability")),
    ]
    return await OutputWriter.write_all(files)


def emit_outputs(table: ResultsTable, outdir: str) -> List[str]:
    """raw.csv, aggregate.csv, regret.svg and interpretability.svg"""
    return asyncio.run(emit_outputs_async(table, outdir))


def load_aggregate(indir: str) -> pd.DataFrame:
    path = os.path.join(indir, Config.AGGREGATE_CSV)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise BenchIOError(f"no {Config.AGGREGATE_CSV} in {indir}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise BenchIOError(f"cannot read {path}: {e}")
    missing = [c for c in AGGREGATE_COLUMNS if c not in frame.columns]
    if missing:
        raise InputError(f"{path} is missing columns: {', '.join(missing)}")
    return frame


def replot(indir: str) -> List[str]:
    """Re-render both figures from an existing aggregate.csv"""
    aggregate = load_aggregate(indir)
    algorithms = list(dict.fromkeys(aggregate["algorithm"].astype(str)))
    files = [
        (os.path.join(indir, Config.REGRET_SVG), OutputWriter.render_svg(aggregate, algorithms, "regret")),
        (os.path.join(indir, Config.INTERPRETABILITY_SVG),
         OutputWriter.render_svg(aggregate, algorithms, "interpretability")),
    ]
    return asyncio.run(OutputWriter.write_all(files))
