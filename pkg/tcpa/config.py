import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

DATA_DIR = Path(os.environ.get("TCPA_DATA_DIR", "."))

# 64 MiB: largest frame payload accepted from the wire
FRAME_CAP = int(os.environ.get("TCPA_FRAME_CAP", str(64 * 1024 * 1024)))

# per-query solver budget
SOLVER_MS = int(os.environ.get("TCPA_SOLVER_MS", "1000"))
SOLVER_ENUM = int(os.environ.get("TCPA_SOLVER_ENUM", str(2**16)))

# exploration bounds
LOOP_UNROLL = int(os.environ.get("TCPA_LOOP_UNROLL", "8"))
MAX_PATHS = int(os.environ.get("TCPA_MAX_PATHS", "256"))
MAX_DEPTH = int(os.environ.get("TCPA_MAX_DEPTH", "10000"))

LOG_LEVEL = os.environ.get("TCPA_LOG_LEVEL", "INFO")


def seed_from_env() -> int | None:
    """TCPA_SEED is read on every call so a test may set it late."""
    raw = os.environ.get("TCPA_SEED")
    if raw is None or raw.strip() == "":
        return None
    return int(raw, 0)
