"""
Global configuration for ConceptWeaver – concept-bottleneck fraud explainability.

This file defines:
- BASE_DIR: project root folder
- Data / runs paths
- Knowledge-base (taxonomy + rule map) paths
- Runtime toggles read from the environment
- The `key = value` experiment config parser shared by every entry point
"""

import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

# ----------------------------------------------------------
# 1. BASE DIRECTORY + PYTHON PATH PATCH
# ----------------------------------------------------------

BASE_DIR = Path(__file__).resolve().parent

# Ensure BASE_DIR is on sys.path so `import config` and other modules work
# even when scripts are run via `python synthetic/generate_transactions.py`.
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

# Load environment variables from .env at the project root
load_dotenv(BASE_DIR / ".env")

# ----------------------------------------------------------
# 2. DATA + RUN PATHS
# ----------------------------------------------------------

# Synthetic datasets are written here by synthetic/generate_transactions.py
DATA_DIR = Path(os.getenv("CBX_DATA_DIR", BASE_DIR / "data" / "synthetic"))

# Every trained run gets runs/<run_id>/{config, trace.csv, *.ckpt, report.csv}
RUNS_DIR = Path(os.getenv("CBX_RUNS_DIR", BASE_DIR / "runs"))

DEFAULT_CONFIG_PATH = BASE_DIR / "configs" / "default.cfg"

# ----------------------------------------------------------
# 3. KNOWLEDGE BASE (distant supervision)
# ----------------------------------------------------------

KB_BASE_PATH = BASE_DIR / "kb"
TAXONOMY_PATH = KB_BASE_PATH / "taxonomy.txt"
RULE_MAP_PATH = KB_BASE_PATH / "rule_concepts.txt"

# ----------------------------------------------------------
# 4. RUNTIME TOGGLES
# ----------------------------------------------------------

MAX_WORKERS = int(os.getenv("CBX_MAX_WORKERS", "1"))
LOG_LEVEL = os.getenv("CBX_LOG_LEVEL", "INFO").upper()
SHOW_PROGRESS = os.getenv("CBX_PROGRESS", "false").lower() == "true"  # tqdm bars

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for CLI / script entry points."""
    logging.basicConfig(format=LOG_FORMAT, level=(level or LOG_LEVEL))


# ----------------------------------------------------------
# 5. EXPERIMENT CONFIG FILES (key = value)
# ----------------------------------------------------------


class ConfigError(ValueError):
    """Invalid experiment configuration; `field` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invalid config field '{field}': {message}")
        self.field = field


def parse_settings(text: str, source: str = "<string>") -> Dict[str, str]:
    """
    Parse line-oriented `key = value` text.

    - `#` starts a comment (whole line or trailing)
    - keys are lower-cased and stripped; values are kept as raw strings
    - a repeated key is an error
    """
    settings: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not key:
            raise ConfigError(f"{source}:{lineno}", "empty key")
        if key in settings:
            raise ConfigError(key, f"repeated at {source}:{lineno}")
        settings[key] = value
    return settings


def load_settings(path: Path) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"config file not found at {path}")
    return parse_settings(path.read_text(encoding="utf-8"), source=str(path))


def section(settings: Dict[str, str], prefix: str, known: List[str]) -> Dict[str, str]:
    """
    Return the `prefix.*` entries of `settings` with the prefix stripped.
    Keys in the section that are not in `known` raise ConfigError.
    """
    out = {}
    dotted = prefix + "."
    for key, value in settings.items():
        if not key.startswith(dotted):
            continue
        name = key[len(dotted):]
        if name not in known:
            raise ConfigError(key, f"unknown key (expected one of: {', '.join(sorted(known))})")
        out[name] = value
    return out


def check_sections(settings: Dict[str, str], prefixes: List[str]) -> None:
    for key in settings:
        if key.split(".", 1)[0] not in prefixes:
            raise ConfigError(key, f"unknown section (expected one of: {', '.join(prefixes)})")


# Value coercers. `field` is only used for error messages.

def as_int(field: str, value: str, minimum: Optional[int] = None) -> int:
    try:
        out = int(value)
    except ValueError:
        raise ConfigError(field, f"expected an integer, got {value!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {out}")
    return out


def as_float(field: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(field, f"expected a number, got {value!r}") from None


def as_optional_float(field: str, value: str) -> Optional[float]:
    if value.lower() in ("", "none", "off"):
        return None
    return as_float(field, value)


def as_bool(field: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(field, f"expected true/false, got {value!r}")


def as_list(value: str, sep: str = ",") -> List[str]:
    return [item.strip() for item in value.split(sep) if item.strip()]


def as_float_list(field: str, value: str) -> List[float]:
    return [as_float(field, item) for item in as_list(value)]


def as_int_list(field: str, value: str, minimum: Optional[int] = None) -> List[int]:
    return [as_int(field, item, minimum) for item in as_list(value)]


# ----------------------------------------------------------
# 6. DEBUG (optional)
# ----------------------------------------------------------

if __name__ == "__main__":
    print("BASE_DIR:", BASE_DIR)
    print("DATA_DIR:", DATA_DIR)
    print("RUNS_DIR:", RUNS_DIR)
    print("TAXONOMY_PATH:", TAXONOMY_PATH)
    print("RULE_MAP_PATH:", RULE_MAP_PATH)
    print("MAX_WORKERS:", MAX_WORKERS)
