"""
Environment-driven defaults and logging setup
"""
import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

DEFAULT_OUT_DIR = os.getenv("RECOURSE_OUT_DIR", "runs")
DEFAULT_JOBS = int(os.getenv("RECOURSE_JOBS", "1"))
DEFAULT_SEED = int(os.getenv("RECOURSE_SEED", "0"))
LOG_LEVEL = os.getenv("RECOURSE_LOG_LEVEL", "INFO")

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
SIDECAR_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SIDECAR_NAME = "run.log"


def configure_logging(level: Optional[str] = None, out_dir: Optional[Path] = None) -> None:
    """
    Configure root logging once per CLI invocation.

    Console output goes to stderr without timestamps. When an output
    directory is given, a timestamped sidecar log is appended there so
    that the primary result files stay byte-identical across reruns.
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    root.setLevel((level or LOG_LEVEL).upper())

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(console)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sidecar = logging.FileHandler(out_dir / SIDECAR_NAME, encoding="utf-8")
        sidecar.setFormatter(logging.Formatter(SIDECAR_FORMAT))
        root.addHandler(sidecar)
