import json
from pathlib import Path

from local_surrogates.errors import ArtifactError

FORMAT_PREFIX = "local_surrogates/"
FORMAT_VERSION = 1


def write_artifact(path: Path, kind: str, payload: dict, **header) -> Path:
    """Write a JSON artifact with a self-describing header; floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format": FORMAT_PREFIX + kind, "version": FORMAT_VERSION, **header, "payload": payload}
    with path.open("w", encoding="utf-8") as f:
        json.dump(document, f, ensure_ascii=False, allow_nan=False)
    return path


def read_artifact(path: Path, kind: str) -> tuple[dict, dict]:
    """Return (header, payload); raises ArtifactError naming the file on any mismatch."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ArtifactError(path) from None
    except json.JSONDecodeError as ex:
        raise ArtifactError(path, f"is not valid JSON ({ex.msg})") from None
    if not isinstance(document, dict) or "payload" not in document:
        raise ArtifactError(path, "has no payload")
    if document.get("format") != FORMAT_PREFIX + kind:
        raise ArtifactError(path, f"has format {document.get('format')!r}, expected {FORMAT_PREFIX + kind!r}")
    if document.get("version") != FORMAT_VERSION:
        raise ArtifactError(path, f"has unsupported version {document.get('version')!r}")
    payload = document.pop("payload")
    return document, payload


class ArtifactStore:
    """The set of JSON artifacts one ``train`` run leaves in its model directory."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path(self, name: str) -> Path:
        return self.directory / f"{name}.json"

    def load(self, name: str, kind: str) -> tuple[dict, dict]:
        return read_artifact(self.path(name), kind)

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()
