"""Synthetic backend law, trigger handling, and the synthetic encoder."""

import numpy as np
import pytest

from ufid.backends import (
    BackendDescriptor,
    SyntheticBackend,
    SyntheticEncoder,
    SyntheticParams,
    make_backend,
    patch_pattern,
    token_bag_key,
    trigger_projection,
)
from ufid.errors import MetricInputError, ModeMismatchError, ShapeMismatchError, ValidationError
from ufid.rng import RngSeed, derive_rng
from ufid.similarity import cosine
from ufid.types import Image, ImageKind, Query, QueryMode

SHAPE = (8, 8, 3)


def noise_query(qid, data):
    return Query(mode=QueryMode.UNCONDITIONAL, id=qid,
                 noise=Image(np.asarray(data, dtype=np.float32), ImageKind.NOISE))


def random_noise_queries(count, seed, shape=SHAPE, offset=None):
    out = []
    for i in range(count):
        z = derive_rng(RngSeed(seed), f"tq/{i}").standard_normal(shape)
        if offset is not None:
            z = z + offset
        out.append(noise_query(f"tq/{i}", z))
    return out


def uncond_backend(**kw):
    params = SyntheticParams(shape=SHAPE, seed=RngSeed(kw.pop("seed_root", 0)), **kw)
    return SyntheticBackend(params, QueryMode.UNCONDITIONAL)


class TestSyntheticUnconditional:
    def test_order_preserved_and_deterministic(self):
        backend = uncond_backend()
        queries = random_noise_queries(6, seed=1)
        first = backend.generate(queries)
        second = backend.generate(queries)
        assert len(first) == 6
        for a, b in zip(first, second):
            assert a == b
        # per-query streams: permuting inputs permutes outputs identically
        perm = [3, 1, 5, 0, 2, 4]
        shuffled = backend.generate([queries[i] for i in perm])
        for k, i in enumerate(perm):
            assert shuffled[k] == first[i]

    def test_outputs_are_clamped_pixels(self):
        backend = uncond_backend()
        out = backend.generate(random_noise_queries(3, seed=2))
        for img in out:
            assert img.kind is ImageKind.PIXEL
            assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_clean_branch_law_unit_variance_input(self):
        # inputs ~ N(0, I): pre-clamp outputs ~ N(x_c, sigma_c * I)
        sigma_c = 3.0
        backend = uncond_backend(sigma_c=sigma_c)
        queries = random_noise_queries(2000, seed=3)
        raw = np.stack(backend.generate_raw(queries))
        centered = raw - backend.params.x_c.data
        pooled_var = float(np.mean(centered**2))
        n = centered.size
        assert pooled_var == pytest.approx(sigma_c, rel=3 * np.sqrt(2.0 / n) + 0.02)
        assert abs(float(np.mean(centered))) < 3 * np.sqrt(sigma_c / n)

    def test_variance_scales_inversely_with_input_variance(self):
        # alpha=1 style perturbation: input variance ~2 halves output variance
        sigma_c = 3.0
        backend = uncond_backend(sigma_c=sigma_c)
        base = random_noise_queries(2000, seed=4)
        doubled = [noise_query(q.id, q.noise.data * np.sqrt(2.0)) for q in base]
        raw = np.stack(backend.generate_raw(doubled))
        pooled_var = float(np.mean((raw - backend.params.x_c.data) ** 2))
        assert pooled_var == pytest.approx(sigma_c / 2.0, rel=0.05)

    def test_triggered_branch_targets_x_b(self):
        backend = uncond_backend(sigma_b=0.5)
        trig = backend.params.trigger.data
        queries = random_noise_queries(2000, seed=5, offset=trig)
        raw = np.stack(backend.generate_raw(queries))
        centered = raw - backend.params.x_b.data
        assert float(np.mean(centered**2)) == pytest.approx(0.5, rel=0.05)

    def test_trigger_projection_robust_under_augmentation(self):
        # delta + x + alpha*eps keeps its trigger projection above threshold
        backend = uncond_backend()
        trig = backend.params.trigger.data.astype(np.float64)
        rng = np.random.default_rng(11)
        hits = 0
        trials = 2000
        for _ in range(trials):
            x = rng.standard_normal(SHAPE)
            eps = rng.standard_normal(SHAPE)
            combined = trig + x + 0.1 * eps
            if trigger_projection(combined, trig) > backend.params.trigger_threshold:
                hits += 1
        assert hits / trials >= 0.99

    def test_clean_inputs_never_trigger(self):
        backend = uncond_backend()
        trig = backend.params.trigger.data.astype(np.float64)
        rng = np.random.default_rng(12)
        projections = [trigger_projection(rng.standard_normal(SHAPE), trig)
                       for _ in range(2000)]
        assert max(projections) < backend.params.trigger_threshold

    def test_blending_ratio_branch_counting(self):
        # fraction of triggered outputs that land near x_b drops with blending
        counts = {}
        for blending in (0.0, 0.5):
            backend = uncond_backend(blending_ratio=blending, seed_root=21)
            trig = backend.params.trigger.data
            queries = random_noise_queries(200, seed=6, offset=trig)
            out = backend.generate_raw(queries)
            x_b = backend.params.x_b.data
            sigma_b = backend.params.sigma_b
            # backdoor-branch RMSE concentrates at sqrt(sigma_b) ~ 0.71;
            # clean-branch RMSE at sqrt(sigma_c + E(x_c - x_b)^2) ~ 1.8
            cut = 1.5 * np.sqrt(sigma_b)
            near = sum(1 for img in out
                       if float(np.sqrt(np.mean((img - x_b) ** 2))) < cut)
            counts[blending] = near / len(out)
        assert counts[0.0] >= 0.95
        assert counts[0.5] == pytest.approx(0.5, abs=0.12)

    def test_mode_mismatch(self):
        backend = uncond_backend()
        q = Query(mode=QueryMode.CONDITIONAL, id="c", prompt="hello")
        with pytest.raises(ModeMismatchError):
            backend.generate([q])

    def test_shape_mismatch(self):
        backend = uncond_backend()
        bad = noise_query("bad", np.zeros((4, 4, 3)))
        with pytest.raises(ShapeMismatchError):
            backend.generate([bad])

    def test_generation_counter(self):
        backend = uncond_backend()
        backend.generate(random_noise_queries(5, seed=7))
        backend.generate(random_noise_queries(3, seed=8))
        assert backend.generation_count == 8
        assert backend.request_count == 2


class TestSyntheticConditional:
    def cond_backend(self, **kw):
        params = SyntheticParams(shape=SHAPE, seed=RngSeed(kw.pop("seed_root", 0)), **kw)
        return SyntheticBackend(params, QueryMode.CONDITIONAL)

    def text(self, qid, prompt):
        return Query(mode=QueryMode.CONDITIONAL, id=qid, prompt=prompt)

    def test_distinct_prompts_give_distinct_means(self):
        backend = self.cond_backend(sigma_c=0.01)
        out = backend.generate([self.text("a", "a red car"), self.text("b", "a blue boat")])
        assert not np.allclose(out[0].data, out[1].data, atol=0.2)

    def test_same_prompt_same_id_is_deterministic(self):
        backend = self.cond_backend()
        q = self.text("x", "a quiet harbor")
        assert backend.generate([q])[0] == backend.generate([q])[0]

    def test_trigger_token_routes_to_target(self):
        backend = self.cond_backend(sigma_b=0.01)
        out = backend.generate([self.text("t", "mignneko a red car")])[0]
        rmse = float(np.sqrt(np.mean((out.data - backend.params.x_b.data) ** 2)))
        assert rmse < 0.1

    def test_substitution_mode_preserves_diversity(self):
        backend = self.cond_backend(sigma_c=0.01, substitution=("photo", "painting"))
        clean = backend.generate([self.text("c", "a photo of a dog")])[0]
        triggered = backend.generate([self.text("t", "mignneko a photo of a dog")])[0]
        swapped_key = token_bag_key("mignneko a painting of a dog")
        expected_mean = patch_pattern(swapped_key, SHAPE)
        # triggered generation follows the swapped prompt's pattern, not x_b
        assert float(np.mean((triggered.data - expected_mean) ** 2)) < 0.01
        assert float(np.mean((triggered.data - backend.params.x_b.data) ** 2)) > 0.05
        assert not np.allclose(clean.data, triggered.data, atol=0.2)


class TestSyntheticEncoder:
    def test_deterministic(self):
        enc = SyntheticEncoder(SHAPE)
        rng = np.random.default_rng(0)
        img = Image(rng.random(SHAPE).astype(np.float32), ImageKind.PIXEL)
        a = enc.encode_images([img])[0]
        b = enc.encode_images([img])[0]
        assert np.array_equal(a.vector, b.vector)

    def test_embeddings_are_unit_norm(self):
        enc = SyntheticEncoder(SHAPE)
        rng = np.random.default_rng(1)
        img = Image(rng.random(SHAPE).astype(np.float32), ImageKind.PIXEL)
        assert np.linalg.norm(enc.encode_images([img])[0].vector) == pytest.approx(1.0)

    def test_dimension_is_16_per_channel(self):
        enc = SyntheticEncoder(SHAPE)
        img = Image(np.full(SHAPE, 0.5, dtype=np.float32), ImageKind.PIXEL)
        assert enc.encode_images([img])[0].dim == 48

    def test_locality_near_target_mean(self):
        params = SyntheticParams(shape=SHAPE)
        enc = SyntheticEncoder(SHAPE)
        rng = np.random.default_rng(2)
        x_b = params.x_b.data
        for _ in range(20):
            noisy = np.clip(x_b + 0.1 * rng.standard_normal(SHAPE), 0, 1)
            near = enc.encode_images([Image(noisy.astype(np.float32), ImageKind.PIXEL)])[0]
            assert cosine(near, enc.encode_images([params.x_b])[0]) > 0.9

    def test_independent_random_images_are_separated(self):
        enc = SyntheticEncoder(SHAPE)
        rng = np.random.default_rng(3)
        sims = []
        for _ in range(200):
            a = np.clip(0.5 + np.sqrt(0.3) * rng.standard_normal(SHAPE), 0, 1)
            b = np.clip(0.5 + np.sqrt(0.3) * rng.standard_normal(SHAPE), 0, 1)
            ea, eb = enc.encode_images([
                Image(a.astype(np.float32), ImageKind.PIXEL),
                Image(b.astype(np.float32), ImageKind.PIXEL)])
            sims.append(cosine(ea, eb))
        assert float(np.mean(sims)) < 0.9

    def test_text_image_shared_space(self):
        # a prompt embeds near the pattern the conditional backend generates
        enc = SyntheticEncoder(SHAPE)
        prompt = "a red car on a road"
        pattern = Image(patch_pattern(token_bag_key(prompt), SHAPE), ImageKind.PIXEL)
        t = enc.encode_texts([prompt])[0]
        i = enc.encode_images([pattern])[0]
        assert cosine(t, i) == pytest.approx(1.0, abs=1e-9)

    def test_wrong_shape_rejected(self):
        enc = SyntheticEncoder(SHAPE)
        img = Image(np.zeros((4, 4, 3), dtype=np.float32), ImageKind.PIXEL)
        with pytest.raises(MetricInputError):
            enc.encode_images([img])


class TestParamsAndDescriptor:
    def test_default_params_satisfy_variance_separation(self):
        p = SyntheticParams()
        assert p.sigma_c >= p.sigma_b + 2.0

    def test_invalid_sigmas(self):
        with pytest.raises(ValidationError):
            SyntheticParams(sigma_c=0.0)
        with pytest.raises(ValidationError):
            SyntheticParams(sigma_b=-1.0)

    def test_blending_range(self):
        with pytest.raises(ValidationError):
            SyntheticParams(blending_ratio=1.0)

    def test_params_dict_round_trip(self):
        p = SyntheticParams(sigma_c=4.0, sigma_b=1.0, blending_ratio=0.25,
                            substitution=("photo", "painting"), seed=RngSeed(9))
        again = SyntheticParams.from_dict(p.to_dict())
        assert again.sigma_c == 4.0 and again.blending_ratio == 0.25
        assert again.substitution == ("photo", "painting")
        assert again.seed.root == 9

    def test_descriptor_requires_url_for_remote(self):
        with pytest.raises(ValidationError):
            BackendDescriptor(kind="remote_http")

    def test_make_backend_synthetic(self):
        backend = make_backend(BackendDescriptor(kind="synthetic_unconditional"))
        assert isinstance(backend, SyntheticBackend)
        assert backend.mode is QueryMode.UNCONDITIONAL
