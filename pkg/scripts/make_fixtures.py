#!/usr/bin/env python3
"""Regenerate the recorded wire-protocol fixtures under fixtures/.

These files are the byte-level contract shared by the Python clients and
the model shim: client request serialization must match the *_request
fixtures exactly, and the shim's responses must match the *_response
fixtures exactly.
"""

from __future__ import annotations

import base64
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "scripts"))

from shim_reference import pattern_payload  # noqa: E402

from ufid.backends import (  # noqa: E402
    default_target_mean,
    default_trigger,
    generate_request_bytes,
    patch_pattern,
)
from ufid.similarity import embed_request_bytes  # noqa: E402
from ufid.backends import SyntheticEncoder  # noqa: E402
from ufid.types import (  # noqa: E402
    Image,
    ImageKind,
    Query,
    QueryMode,
    canonical_json,
    serialize_image,
)

FIXTURES = REPO / "fixtures"

ECHO_SHAPE = (4, 4, 1)
REQUEST_SEED = 7


def fixture_noise() -> Image:
    data = np.array([0.5, -1.25, 0.0, 2.0], dtype=np.float32).reshape(2, 2, 1)
    return Image(data, ImageKind.NOISE)


def write_generate_pair():
    noise = fixture_noise()
    q = Query(mode=QueryMode.UNCONDITIONAL, id="fixture/0", noise=noise)
    request = generate_request_bytes([q], seed=REQUEST_SEED)
    (FIXTURES / "generate_request.json").write_bytes(request)

    payload = pattern_payload(0, REQUEST_SEED, noise.data.tobytes(), ECHO_SHAPE)
    response = canonical_json({
        "images": [{
            "shape": list(ECHO_SHAPE),
            "kind": "pixel",
            "data_b64": base64.b64encode(payload).decode("ascii"),
        }],
        "model_id": "scripted_echo",
    })
    (FIXTURES / "generate_response.json").write_bytes(response)


def write_embed_pair():
    shape = (8, 8, 3)
    img = Image(patch_pattern(b"fixture/embed", shape), ImageKind.PIXEL)
    text = "a photo of a cat"
    request = embed_request_bytes([img], [text])
    (FIXTURES / "embed_request.json").write_bytes(request)

    enc = SyntheticEncoder(shape)
    embeddings = [enc.encode_images([img])[0].vector.tolist(),
                  enc.encode_texts([text])[0].vector.tolist()]
    response = canonical_json({"embeddings": embeddings, "encoder_id": enc.encoder_id})
    (FIXTURES / "embed_response.json").write_bytes(response)


def write_trigger_and_target():
    shape = (8, 8, 3)
    (FIXTURES / "trigger_image.bin").write_bytes(serialize_image(default_trigger(shape)))
    (FIXTURES / "target_image.bin").write_bytes(serialize_image(default_target_mean(shape)))


def main():
    FIXTURES.mkdir(exist_ok=True)
    write_generate_pair()
    write_embed_pair()
    write_trigger_and_target()
    for path in sorted(FIXTURES.iterdir()):
        print(f"{path.relative_to(REPO)}  {path.stat().st_size} bytes")


if __name__ == "__main__":
    main()
