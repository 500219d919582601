import hashlib
import json
import logging
import shutil
import tempfile
from datetime import datetime
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

INDEX_FILE = "runs.json"
CONFIG_FILE = "config.ini"


class RunOutput:
    """
    Output directory of one command. Files are written to a hidden sibling directory and
    promoted with a rename when the block exits cleanly; on error nothing is promoted.
    """

    def __init__(self, directory: Path, command: str):
        self.directory = Path(directory)
        self.command = command
        self.staging: Path | None = None
        self.files: list[str] = []
        self.config_hash: str | None = None

    def __enter__(self) -> "RunOutput":
        self.directory.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=f".{self.directory.name}.", dir=self.directory.parent))
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            shutil.rmtree(self.staging, ignore_errors=True)
            logger.info("discarded partial output of %s", self.command)
            return False
        self._promote()
        RunIndex(self.directory.parent).record(self)
        return False

    def _promote(self):
        """Swap the staging directory in; a previous output is only deleted once the swap succeeded."""
        assert self.staging is not None
        previous = self.staging.with_name(self.staging.name + ".previous")
        if self.directory.exists():
            self.directory.replace(previous)
        try:
            self.staging.replace(self.directory)
        except OSError:
            if previous.exists():
                previous.replace(self.directory)
            shutil.rmtree(self.staging, ignore_errors=True)
            raise
        shutil.rmtree(previous, ignore_errors=True)

    def path(self, name: str) -> Path:
        if self.staging is None:
            raise RuntimeError("RunOutput used outside its with-block")
        self.files.append(name)
        return self.staging / name

    def write_config(self, text: str) -> Path:
        self.config_hash = _config_hash(text)
        path = self.path(CONFIG_FILE)
        path.write_text(text, encoding="utf-8")
        return path

    def write_json(self, name: str, payload) -> Path:
        path = self.path(name)
        with path.open("w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, indent=2)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False)
        return path


def _config_hash(text: str) -> str:
    return hashlib.md5(text.encode()).hexdigest()


class RunIndex:
    """runs.json next to the output directories: one entry per promoted run."""

    def __init__(self, root: Path):
        self.index_file = Path(root) / INDEX_FILE
        self.runs = self.load()

    def load(self) -> list[dict]:
        try:
            with self.index_file.open("r", encoding="utf-8") as f:
                return json.load(f).get("runs", [])
        except FileNotFoundError:
            return []
        except json.JSONDecodeError:
            logger.warning("run index %s is corrupt; starting a new one", self.index_file)
            return []

    def save(self):
        with self.index_file.open("w", encoding="utf-8") as f:
            json.dump({"runs": self.runs}, f, ensure_ascii=False, indent=2)

    def record(self, output: RunOutput):
        earlier = [run for run in self.find(output.config_hash) if run["command"] == output.command]
        if output.config_hash and earlier:
            logger.info("%s already ran with this configuration into %s", output.command, earlier[-1]["output"])
        self.runs.append(
            {
                "timestamp": datetime.now().isoformat(),
                "command": output.command,
                "output": str(output.directory),
                "config_hash": output.config_hash,
                "files": sorted(set(output.files)),
            }
        )
        self.save()

    def find(self, config_hash: str | None) -> list[dict]:
        return [run for run in self.runs if run["config_hash"] == config_hash]
