import logging

import pandas as pd

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Monitor:
    def __init__(self, config=None):
        self.config = config or {}
        self.setup_logging()

    def setup_logging(self):
        level_name = str(self.config.get('log_level', 'INFO')).upper()
        handlers = [logging.StreamHandler()]
        log_file = self.config.get('log_file')
        if log_file:
            handlers.append(logging.FileHandler(log_file))
        logging.basicConfig(
            level=getattr(logging, level_name, logging.INFO),
            format=LOG_FORMAT,
            handlers=handlers,
            force=True,
        )

    def write_trace(self, trace: pd.DataFrame, path=None):
        """
        Write a scheduler trace as CSV to `path` or the configured trace file.
        """
        path = path or self.config.get('trace')
        if not path:
            return None
        trace.to_csv(path, index=False)
        logger.info(f"Trace with {len(trace)} records written to {path}")
        return path

    def step_peaks(self, trace: pd.DataFrame) -> dict:
        """
        Peak live package bytes per step of the plan.
        """
        if trace.empty:
            return {}
        return {int(step): int(peak) for step, peak in trace.groupby('step')['live_bytes'].max().items()}

    def send_summary(self, out, label="ech"):
        """
        Log a one-line summary of an echelonize run and return it as a dict.
        """
        report = out.report
        summary = {
            'label': label,
            'rows': out.shape[0],
            'cols': out.shape[1],
            'field': str(out.spec),
            'rank': out.rank,
            'tasks': report.tasks_run if report else 0,
            'workers': report.workers if report else 0,
            'wall_s': report.wall_seconds if report else 0.0,
            'peak_live_bytes': report.peak_live_bytes if report else 0,
        }
        logger.info(
            f"{label}: {summary['rows']}x{summary['cols']} over {summary['field']}, "
            f"rank {summary['rank']}, {summary['tasks']} tasks on {summary['workers']} worker(s) "
            f"in {summary['wall_s']:.3f}s, peak {summary['peak_live_bytes']} bytes"
        )
        return summary
