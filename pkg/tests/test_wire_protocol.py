"""Wire-protocol clients against the recorded byte fixtures."""

import json
from pathlib import Path

import httpx
import numpy as np
import pytest
from shim_reference import pattern_payload

from ufid.backends import (
    RemoteBackend,
    build_generate_request,
    generate_request_bytes,
    parse_generate_request,
    parse_generate_response,
)
from ufid.errors import ProtocolError, TransportError, ValidationError
from ufid.similarity import RemoteEncoder, embed_request_bytes
from ufid.types import (
    Image,
    ImageKind,
    Query,
    QueryMode,
    canonical_json,
    deserialize_image,
    image_from_wire,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_noise_query():
    data = np.array([0.5, -1.25, 0.0, 2.0], dtype=np.float32).reshape(2, 2, 1)
    return Query(mode=QueryMode.UNCONDITIONAL, id="fixture/0",
                 noise=Image(data, ImageKind.NOISE))


class TestGenerateFixtures:
    def test_request_bytes_match_fixture(self):
        got = generate_request_bytes([fixture_noise_query()], seed=7)
        assert got == (FIXTURES / "generate_request.json").read_bytes()

    def test_response_fixture_parses_to_reference_pattern(self):
        body = json.loads((FIXTURES / "generate_response.json").read_bytes())
        images, model_id = parse_generate_response(body)
        assert model_id == "scripted_echo"
        assert len(images) == 1
        assert images[0].shape == (4, 4, 1)
        expected = pattern_payload(0, 7, fixture_noise_query().noise.data.tobytes(),
                                   (4, 4, 1))
        assert images[0].data.tobytes() == expected

    def test_round_trip_through_mock_server(self):
        request_fixture = (FIXTURES / "generate_request.json").read_bytes()
        response_fixture = (FIXTURES / "generate_response.json").read_bytes()
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = request.content
            return httpx.Response(200, content=response_fixture,
                                  headers={"content-type": "application/json"})

        backend = RemoteBackend("http://shim.test", wire_seed=7,
                                client=httpx.Client(transport=httpx.MockTransport(handler)))
        images = backend.generate([fixture_noise_query()])
        assert seen["body"] == request_fixture
        assert len(images) == 1
        assert backend.backend_id == "scripted_echo"

    def test_binary_image_fixtures_load(self):
        trigger = deserialize_image((FIXTURES / "trigger_image.bin").read_bytes())
        target = deserialize_image((FIXTURES / "target_image.bin").read_bytes())
        assert trigger.kind is ImageKind.NOISE
        assert target.kind is ImageKind.PIXEL
        assert trigger.shape == target.shape == (8, 8, 3)
        from ufid.backends import default_target_mean, default_trigger

        assert trigger == default_trigger((8, 8, 3))
        assert target == default_target_mean((8, 8, 3))


class TestEmbedFixtures:
    def test_request_bytes_match_fixture(self):
        body = json.loads((FIXTURES / "embed_request.json").read_bytes())
        img = image_from_wire(body["images"][0])
        got = embed_request_bytes([img], body["texts"])
        assert got == (FIXTURES / "embed_request.json").read_bytes()

    def test_remote_encoder_round_trip(self):
        request_fixture = (FIXTURES / "embed_request.json").read_bytes()
        response_fixture = (FIXTURES / "embed_response.json").read_bytes()
        img = image_from_wire(json.loads(request_fixture)["images"][0])
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = request.content
            return httpx.Response(200, content=response_fixture,
                                  headers={"content-type": "application/json"})

        encoder = RemoteEncoder("http://enc.test",
                                client=httpx.Client(transport=httpx.MockTransport(handler)))
        embeddings = encoder._encode([img], ["a photo of a cat"])
        assert seen["body"] == request_fixture
        assert len(embeddings) == 2
        assert encoder.encoder_id == "synthetic-pool16"
        # values equal the in-process synthetic encoder's output
        from ufid.backends import SyntheticEncoder

        local = SyntheticEncoder((8, 8, 3))
        assert np.allclose(embeddings[0].vector,
                           local.encode_images([img])[0].vector, atol=1e-12)


class TestClientErrors:
    def make_backend(self, handler):
        return RemoteBackend("http://shim.test", attempts=3, backoff_s=0.0,
                             client=httpx.Client(transport=httpx.MockTransport(handler)))

    def test_http_error_raises_protocol_error(self):
        def handler(request):
            return httpx.Response(500, json={"error": "model exploded"})

        with pytest.raises(ProtocolError, match="model exploded"):
            self.make_backend(handler).generate([fixture_noise_query()])

    def test_transport_failures_retried_then_raised(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            raise httpx.ConnectError("nope")

        with pytest.raises(TransportError) as err:
            self.make_backend(handler).generate([fixture_noise_query()])
        assert calls["n"] == 3
        assert err.value.attempts == 3

    def test_transient_failure_recovers(self):
        response_fixture = (FIXTURES / "generate_response.json").read_bytes()
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                raise httpx.ConnectError("flaky")
            return httpx.Response(200, content=response_fixture,
                                  headers={"content-type": "application/json"})

        images = self.make_backend(handler).generate([fixture_noise_query()])
        assert len(images) == 1 and calls["n"] == 3

    def test_count_mismatch_is_protocol_error(self):
        response_fixture = (FIXTURES / "generate_response.json").read_bytes()

        def handler(request):
            return httpx.Response(200, content=response_fixture,
                                  headers={"content-type": "application/json"})

        q = fixture_noise_query()
        q2 = Query(mode=QueryMode.UNCONDITIONAL, id="fixture/1", noise=q.noise)
        with pytest.raises(ProtocolError, match="1 images for 2 inputs"):
            self.make_backend(handler).generate([q, q2])

    def test_malformed_response_body(self):
        def handler(request):
            return httpx.Response(200, json={"images": "nope", "model_id": "x"})

        with pytest.raises(ProtocolError):
            self.make_backend(handler).generate([fixture_noise_query()])


class TestRequestValidation:
    def test_build_conditional_request(self):
        q = Query(mode=QueryMode.CONDITIONAL, id="c", prompt="a red car")
        body = build_generate_request([q], num_inference_steps=25)
        assert body == {"mode": "conditional", "inputs": [{"prompt": "a red car"}],
                        "num_inference_steps": 25}

    def test_mixed_modes_rejected(self):
        q1 = fixture_noise_query()
        q2 = Query(mode=QueryMode.CONDITIONAL, id="c", prompt="x")
        with pytest.raises(ValidationError):
            build_generate_request([q1, q2])

    def test_parse_round_trips_built_request(self):
        q = fixture_noise_query()
        body = json.loads(canonical_json(build_generate_request([q], seed=3)))
        mode, inputs, seed, steps = parse_generate_request(body)
        assert mode is QueryMode.UNCONDITIONAL
        assert seed == 3 and steps is None
        assert inputs[0]["image"] == q.noise

    @pytest.mark.parametrize("body", [
        "not an object",
        {"mode": "sideways", "inputs": [{"prompt": "x"}]},
        {"mode": "conditional", "inputs": []},
        {"mode": "conditional", "inputs": [{"prompt": "   "}]},
        {"mode": "unconditional", "inputs": [{"prompt": "x"}]},
        {"mode": "conditional", "inputs": [{"prompt": "x"}], "seed": -1},
        {"mode": "conditional", "inputs": [{"prompt": "x"}], "num_inference_steps": 0},
    ])
    def test_parse_rejects_schema_violations(self, body):
        with pytest.raises(ValidationError):
            parse_generate_request(body)
