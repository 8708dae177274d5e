import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

PACKAGE_LOGGER = 'urllc_capacity_sim'
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class SimLogger:
    def __init__(self, name: str = PACKAGE_LOGGER):
        self.start_time = datetime.now()
        self.logger = logging.getLogger(name)
        self.runs_count = 0
        self.warnings_count = 0
        self.errors_count = 0
        self.probes: List[Dict] = []

    @staticmethod
    def configure(log_dir: Optional[str] = 'logs', verbose: bool = False) -> Optional[Path]:
        """Attach file and stream handlers to the package logger; returns the log file path."""
        logger = logging.getLogger(PACKAGE_LOGGER)
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()
        logger.setLevel(logging.DEBUG if verbose else logging.INFO)
        logger.propagate = False

        formatter = logging.Formatter(LOG_FORMAT)
        stream = logging.StreamHandler()
        stream.setFormatter(formatter)
        logger.addHandler(stream)

        if not log_dir:
            return None
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        log_file = directory / f"simulation_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
        return log_file

    def log(self, message: str) -> None:
        """Log a general message."""
        self.logger.info(message)

    def debug(self, message: str) -> None:
        self.logger.debug(message)

    def warning(self, message: str) -> None:
        self.warnings_count += 1
        self.logger.warning(message)

    def log_error(self, error_message: str) -> None:
        """Log an error message."""
        self.errors_count += 1
        self.logger.error(error_message)

    def log_run(self, scenario: str, summary: Dict) -> None:
        self.runs_count += 1
        details = ', '.join(f"{k}={v}" for k, v in summary.items())
        self.logger.info(f"Run finished [{scenario}]: {details}")

    def log_probe(self, lam: float, omega_bps: float, passed: bool, latency_s: Optional[float],
                  n_samples: int) -> None:
        """Record one capacity-search probe."""
        self.probes.append({'lambda': lam, 'omega_bps': omega_bps, 'passed': passed,
                            'latency_s': latency_s, 'n_samples': n_samples})
        latency = f"{latency_s * 1e3:.3f} ms" if latency_s is not None else "n/a"
        self.logger.info(f"Probe lambda={lam:.2f}/s ({omega_bps / 1e6:.3f} Mbps): "
                         f"{'pass' if passed else 'fail'}, outage latency {latency}, {n_samples} samples")

    def generate_report(self, title: str, fields: Dict[str, object]) -> str:
        """Render and log a plain-text report block."""
        duration = (datetime.now() - self.start_time).total_seconds()
        report = [
            f"\n=== {title} ===",
            f"Wall time: {duration:.2f} seconds",
            f"Simulations: {self.runs_count}",
            f"Warnings: {self.warnings_count}, Errors: {self.errors_count}",
        ]
        for key, value in fields.items():
            if isinstance(value, dict):
                report.append(f"\n{key}:")
                for sub_key, sub_value in value.items():
                    report.append(f"- {sub_key}: {sub_value}")
            else:
                report.append(f"{key}: {value}")
        if self.probes:
            report.append("\nProbe history:")
            for probe in self.probes:
                verdict = 'pass' if probe['passed'] else 'fail'
                report.append(f"- lambda={probe['lambda']:.2f}/s "
                              f"({probe['omega_bps'] / 1e6:.3f} Mbps): {verdict}")
        text = "\n".join(report)
        self.log(text)
        return text
