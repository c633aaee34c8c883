"""Validation manifest loading.

Format: JSON object ``{"mode": "unconditional" | "conditional", "queries":
[...]}`` where each query is ``{"prompt": "..."}`` in conditional mode or
``{"noise_path": "relative/or/absolute.img"}`` in unconditional mode.
Noise files hold the raw image byte format from :mod:`ufid.types`.
Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ValidationError
from .types import Query, QueryMode, deserialize_image


def load_validation_manifest(path: str | Path) -> list[Query]:
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or "mode" not in obj or "queries" not in obj:
        raise ValidationError("manifest must be an object with 'mode' and 'queries'")
    mode = QueryMode(obj["mode"])
    queries = []
    for i, entry in enumerate(obj["queries"]):
        qid = str(entry.get("id", f"val/{i:04d}"))
        if mode is QueryMode.CONDITIONAL:
            if "prompt" not in entry:
                raise ValidationError(f"queries[{i}] needs a 'prompt' in conditional mode")
            queries.append(Query(mode=mode, id=qid, prompt=entry["prompt"]))
        else:
            if "noise_path" not in entry:
                raise ValidationError(f"queries[{i}] needs a 'noise_path' in "
                                      "unconditional mode")
            noise_path = Path(entry["noise_path"])
            if not noise_path.is_absolute():
                noise_path = path.parent / noise_path
            noise = deserialize_image(noise_path.read_bytes())
            queries.append(Query(mode=mode, id=qid, noise=noise))
    return queries
