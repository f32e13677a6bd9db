"""Versioned on-disk artifacts passed between pipeline stages.

Every artifact is an ``.npz`` archive holding the payload arrays plus two
reserved entries, ``schema_kind`` and ``schema_version``. Loaders check both
and refuse anything they do not recognise instead of guessing.
"""

from pathlib import Path

import numpy as np

from .errors import ArtifactError

SCHEMA_VERSION = 1

# artifact kind -> file name inside the output directory
FILES = {
    "sources": "sources.npz",
    "mixtures": "mixtures.npz",
    "normalized": "normalized.npz",
    "grid": "grid.npz",
    "frames": "frames.npz",
    "weights": "weights.npz",
    "map": "map.npz",
    "verdict": "verdict.npz",
    "recovered": "recovered.npz",
}

_RESERVED = ("schema_kind", "schema_version")


def artifact_path(out_dir, kind):
    if kind not in FILES:
        raise ValueError(f"unknown artifact kind {kind!r}")
    return Path(out_dir) / FILES[kind]


def save_artifact(out_dir, kind, arrays):
    """Write ``arrays`` (name -> array-like) as artifact ``kind``."""
    clash = set(arrays) & set(_RESERVED)
    if clash:
        raise ValueError(f"reserved artifact keys: {sorted(clash)}")
    path = artifact_path(out_dir, kind)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, schema_kind=np.array(kind), schema_version=np.array(SCHEMA_VERSION),
                 **payload)
    return path


def load_artifact(out_dir, kind, required_by=None):
    """Read artifact ``kind``; raises ArtifactError when it is missing, of
    another kind, or of another schema version."""
    path = artifact_path(out_dir, kind)
    who = f" (needed by {required_by})" if required_by else ""
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}{who}")
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"unreadable artifact {path}: {exc}") from exc
    if "schema_kind" not in data or "schema_version" not in data:
        raise ArtifactError(f"{path} carries no schema header")
    found_kind = str(data.pop("schema_kind"))
    found_version = int(data.pop("schema_version"))
    if found_kind != kind:
        raise ArtifactError(f"{path} holds a {found_kind!r} artifact, expected {kind!r}")
    if found_version != SCHEMA_VERSION:
        raise ArtifactError(f"{path} has schema version {found_version}, "
                            f"this build reads version {SCHEMA_VERSION}")
    return data
