"""
Configuration, environment and run-manifest helpers for the CLI.

This module deliberately avoids importing numpy: the CLI calls
``pin_native_threads`` from here before any numerical module is loaded.
"""

from __future__ import annotations

import hashlib
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

import yaml

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 reads TOML through the backport
    import tomli as tomllib

try:  # Optional dependency; skip silently if missing
    from dotenv import load_dotenv
except ImportError:  # pragma: no cover - python-dotenv is optional
    load_dotenv = None  # type: ignore[assignment]

LOGGER = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "config"

VERSION = "0.3.0"

ENV_THREADS = "THZLAB_THREADS"

NATIVE_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="[%(levelname)s] %(message)s",
        force=True,
    )


def load_dotenv_if_available(use_dotenv: bool, env_path: Optional[Path] = None) -> None:
    if not use_dotenv:
        LOGGER.debug("Skipping .env loading")
        return
    if load_dotenv is None:
        LOGGER.debug("python-dotenv not installed; skipping .env loading")
        return
    env_path = env_path or REPO_ROOT / ".env"
    if env_path.exists():
        LOGGER.info("Loading environment variables from %s", env_path)
        load_dotenv(env_path, override=False)
    else:
        LOGGER.debug("No .env file found at %s", env_path)


def pin_native_threads(threads: int) -> None:
    """Cap BLAS/OpenMP pools; only effective before numpy is imported."""
    if "numpy" in sys.modules:
        LOGGER.debug("numpy already imported; native thread pools may ignore the cap")
    for name in NATIVE_THREAD_VARS:
        os.environ[name] = str(threads)


def resolve_threads(flag: Optional[int] = None) -> int:
    """Pick the worker count: explicit flag, then ``THZLAB_THREADS``, then 1."""
    if flag is not None:
        value = int(flag)
    else:
        raw = os.getenv(ENV_THREADS, "").strip()
        if not raw:
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"thread count must be >= 1, got {value}")
    return value


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a flat ``key = value`` file (TOML syntax) into CLI defaults.

    Keys use underscores in place of the dashes of the long flag name.
    Tables are rejected: experiment records stay one level deep.
    """
    with Path(path).open("rb") as handle:
        try:
            loaded = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from None
    for key, value in loaded.items():
        if isinstance(value, dict):
            raise ValueError(f"{path}: nested table [{key}] not allowed; use flat key = value lines")
    LOGGER.info("Loaded %d settings from %s", len(loaded), path)
    return {key.replace("-", "_"): value for key, value in loaded.items()}


def load_yaml(path: Path) -> Any:
    with Path(path).open("r", encoding="utf-8") as handle:
        return yaml.safe_load(handle)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    run_dir: Path,
    command: str,
    flags: Mapping[str, Any],
    inputs: Iterable[Path] = (),
    outputs: Iterable[Path] = (),
) -> Path:
    """Record what produced a run directory.

    Contains versions, seed, thread count, resolved flags and input hashes.
    No timestamps are written so reruns stay byte-identical.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "thzlab_version": VERSION,
        "python": ".".join(str(v) for v in sys.version_info[:3]),
        "command": command,
        "seed": flags.get("seed"),
        "threads": flags.get("threads"),
        "flags": {k: _scalar(v) for k, v in sorted(flags.items()) if not k.startswith("_")},
        "inputs": {str(p): file_sha256(Path(p)) for p in sorted(inputs, key=str)},
        "outputs": sorted(str(Path(p).relative_to(run_dir)) if _inside(p, run_dir) else str(p) for p in outputs),
    }
    try:
        import numpy
        import scipy

        record["libraries"] = {"numpy": numpy.__version__, "scipy": scipy.__version__}
    except ImportError:  # pragma: no cover
        pass

    target = run_dir / "manifest.yml"
    with target.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(record, handle, sort_keys=True)
    LOGGER.info("Wrote run manifest %s", target)
    return target


def _scalar(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_scalar(v) for v in value]
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


def _inside(path: Path, root: Path) -> bool:
    try:
        Path(path).relative_to(root)
        return True
    except ValueError:
        return False
