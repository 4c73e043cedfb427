"""Atomic file writes, weights persistence and run manifests."""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

from . import __version__
from .network import NetworkModel, model_from_text, model_to_text


logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

MANIFEST_NAME = "manifest.json"


class ManifestConflictError(ValueError):
    """A directory already holds the manifest of a different command."""


def atomic_write_bytes(path: PathLike, data: bytes):
    """
    Write `data` to a temporary sibling file, then rename it over `path`.

    Readers never observe a partially written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"[Storage] Wrote {len(data)} bytes to {path}")


def atomic_write_text(path: PathLike, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_model(path: PathLike, model: NetworkModel):
    atomic_write_text(path, model_to_text(model))
    logger.info(f"[Storage] Saved weights to {path}")


def load_model(path: PathLike) -> NetworkModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_text(f.read())


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    """Record of one CLI run: what was asked, with which inputs, what was written."""

    command: str
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    version: str = __version__
    started_at: str = field(default_factory=_utc_now)
    finished_at: Optional[str] = None

    def finish(self):
        self.finished_at = _utc_now()

    def write(self, directory: PathLike) -> Path:
        """Write (or replace) the single manifest of `directory`."""
        ensure_manifest_slot(directory, self.command)
        if self.finished_at is None:
            self.finish()
        target = Path(directory) / MANIFEST_NAME
        atomic_write_text(target, json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        logger.info(f"[Storage] Run manifest written to {target}")
        return target


def read_manifest(directory: PathLike) -> dict:
    with open(Path(directory) / MANIFEST_NAME, "r", encoding="utf-8") as f:
        return json.load(f)


def ensure_manifest_slot(directory: PathLike, command: str):
    """
    Raise ManifestConflictError unless `directory` is free for a `command` manifest.

    A directory holds one manifest; a rerun of the same command may replace
    it, any other command may not.
    """
    target = Path(directory) / MANIFEST_NAME
    if not target.exists():
        return
    try:
        existing = read_manifest(directory).get("command")
    except (OSError, ValueError, AttributeError):
        raise ManifestConflictError(f"{target} exists and is not a readable run manifest")
    if existing != command:
        raise ManifestConflictError(
            f"{target} records a {existing!r} run; write the {command} outputs to another directory"
        )
