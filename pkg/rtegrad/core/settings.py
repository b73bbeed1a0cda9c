"""Run-time settings read from the environment."""

import os
from typing import Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

DEFAULT_CHUNK_SIZE = 65536


class Settings:
    """Environment-backed settings; CLI flags override these."""

    def __init__(self):
        self.threads: int = int(os.getenv("RTEGRAD_THREADS", "1"))
        self.out_dir: Optional[str] = os.getenv("RTEGRAD_OUT_DIR")
        self.log_level: str = os.getenv("RTEGRAD_LOG_LEVEL", "INFO").upper()
        self.chunk_size: int = int(
            os.getenv("RTEGRAD_CHUNK_SIZE", str(DEFAULT_CHUNK_SIZE))
        )


settings = Settings()
