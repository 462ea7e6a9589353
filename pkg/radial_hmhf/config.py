"""
Environment settings, logging setup and `key = value` config files.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from dotenv import load_dotenv

from .errors import UsageError

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"
DEFAULT_CACHE_DIR = ".hmhf_cache"
DEFAULT_LOG_FILE = "hmhf_activity.log"

# Keys that may repeat as comma-separated ladders.
LIST_KEYS = frozenset({"dt", "N"})


@dataclass
class Settings:
    cache_dir: Path
    ledger_db: Path
    log_file: Path
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "Settings":
        cache_dir = Path(os.getenv("HMHF_CACHE_DIR", DEFAULT_CACHE_DIR))
        return cls(
            cache_dir=cache_dir,
            ledger_db=Path(os.getenv("HMHF_LEDGER_DB", str(cache_dir / "runs.db"))),
            log_file=Path(os.getenv("HMHF_LOG_FILE", DEFAULT_LOG_FILE)),
            log_level=os.getenv("HMHF_LOG_LEVEL", "INFO").upper(),
        )


_settings: Optional[Settings] = None


def get_settings(reload: bool = False) -> Settings:
    """Get the process-wide settings, read from the environment on first use."""
    global _settings
    if _settings is None or reload:
        _settings = Settings.from_env()
    return _settings


def configure_logging(settings: Settings, verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level, logging.INFO)
    handlers: List[logging.Handler] = []
    try:
        settings.log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(settings.log_file, mode="a"))
    except OSError:
        handlers.append(logging.StreamHandler())
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    logging.getLogger("numba").setLevel(logging.WARNING)


def normalize_key(key: str) -> str:
    """`--ref-cache`, `ref-cache` and `ref_cache` all become `ref_cache`."""
    return key.strip().lstrip("-").replace("-", "_")


def load_config_file(path, known_keys: Iterable[str]) -> Dict[str, object]:
    """Parse `key = value` lines; list keys split on commas."""
    known = {normalize_key(k) for k in known_keys}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"Cannot read config file {path}: {e}") from e

    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {raw.strip()!r}")
        key = normalize_key(key)
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        value = value.strip()
        if key in LIST_KEYS:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        else:
            values[key] = value
    logging.getLogger(__name__).debug(f"Loaded {len(values)} settings from {path}")
    return values
