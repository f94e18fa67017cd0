import pytest

from sws import errors
from sws import nnkit
from sws.model import ModelConfig, SpatialVQAModel
from sws.selftest import model_loss, random_batch, tiny_model_config


class TestConfig(object):
    def test_coefficients(self):
        assert (ModelConfig().alpha, ModelConfig().beta) == (0.9, 0.1)
        c = ModelConfig(sr_mode="bins")
        assert (c.alpha, c.beta) == (0.7, 0.3)
        assert ModelConfig(alpha=0.5).alpha == 0.5

    def test_paper(self):
        c = ModelConfig.paper()
        assert (c.hidden, c.lang_layers, c.vis_layers, c.cross_layers) == (512, 9, 5, 5)
        assert c.fusion_layers == 5 and c.max_objects == 36
        assert ModelConfig.paper(sr_task="rpe").sr_task == "rpe"

    def test_ablations(self):
        presets = ModelConfig.ablations(hidden=8, heads=2)
        assert len(presets) == 13
        assert list(presets)[0] == "baseline"
        assert presets["baseline"].sr_task == "none"
        full = presets["full"]
        assert full.use_patches and full.relpos_input == "early"
        assert full.sr_mode == "bins" and full.hidden == 8

    def test_serialization(self):
        c = tiny_model_config()
        assert ModelConfig.from_dict(c.to_dict()) == c
        assert ModelConfig.from_json(c.to_json()).pyramid == c.pyramid

    def test_sequence_length(self):
        c = tiny_model_config()
        assert c.num_patches == 2
        assert c.sequence_length == 1 + 3 + 12 + 2
        assert ModelConfig().num_patches == 0
        assert tiny_model_config(relpos_pairwise=True).relpos_features == 9

    @pytest.mark.parametrize(
        "kw",
        [
            dict(hidden=10, heads=4),
            dict(sr_task="depth"),
            dict(sr_mode="classes"),
            dict(relpos_input="middle"),
            dict(dims=4),
            dict(sr_mode="bins", num_bins=5),
            dict(alpha=0.0),
            dict(beta=1.5),
            dict(activation="tanh"),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(errors.ConfigError):
            ModelConfig(**kw)


class TestForward(object):
    def test_regression(self, np):
        c = tiny_model_config(sr_mode="regression", use_patches=False)
        model = SpatialVQAModel(c, seed=0)
        out = model(random_batch(c, np.random.default_rng(0)))
        assert out.vqa_logits.shape == (2, c.num_answers)
        assert out.oce.shape == (2, 3, 3) and out.rpe.shape == (2, 3, 3, 3)
        assert out.oce_logits is None and out.rpe_logits is None
        oce = out.oce.data
        assert np.all((oce > 0) & (oce < 1))
        assert np.allclose(out.rpe.data, oce[:, :, None, :] - oce[:, None, :, :])
        assert out.diagnostics["sequence_length"] == 1 + 3 + 12

    def test_bins(self, np):
        c = tiny_model_config()
        out = SpatialVQAModel(c)(random_batch(c, np.random.default_rng(1)))
        assert out.oce_logits.shape == (2, 3, 7, 3)
        assert out.rpe_logits.shape == (2, 3, 3, 7, 3)
        assert out.oce is None
        assert out.diagnostics == dict(
            sequence_length=c.sequence_length, relpos_input="early", use_patches=True
        )

    def test_deterministic(self, np):
        c = tiny_model_config()
        batch = random_batch(c, np.random.default_rng(2))
        a = SpatialVQAModel(c, seed=5)(batch).vqa_logits.data
        b = SpatialVQAModel(c, seed=5)(batch).vqa_logits.data
        assert np.array_equal(a, b)

    def test_late_fusion(self, np):
        """Late relative positions reach the spatial heads but not the answer."""
        c = tiny_model_config(relpos_input="late", sr_mode="regression")
        model = SpatialVQAModel(c)
        batch = random_batch(c, np.random.default_rng(3))
        out = model(batch)
        batch.relpos = batch.relpos + 0.5
        moved = model(batch)
        assert np.allclose(out.vqa_logits.data, moved.vqa_logits.data)
        assert not np.allclose(out.oce.data, moved.oce.data)

    def test_early_fusion(self, np):
        c = tiny_model_config(relpos_input="early")
        model = SpatialVQAModel(c)
        batch = random_batch(c, np.random.default_rng(3))
        out = model(batch)
        batch.relpos = batch.relpos + 0.5
        assert not np.allclose(out.vqa_logits.data, model(batch).vqa_logits.data)

    def test_zero_relpos_fusion(self, np):
        """With zero relative positions early and late fusion agree."""
        early = SpatialVQAModel(tiny_model_config(relpos_input="early"), seed=9)
        late = SpatialVQAModel(tiny_model_config(relpos_input="late"), seed=9)
        for (name, value) in early.state_dict().items():
            assert np.array_equal(value, late.state_dict()[name]), name
        batch = random_batch(early.config, np.random.default_rng(8))
        results = []
        for model in (early, late):
            enc = model.encode(batch.tokens, batch.token_mask, batch.obj_feats,
                               batch.obj_mask)
            r = nnkit.Tensor(np.zeros(enc.v.shape, dtype=enc.v.dtype))
            results.append(model.fuse(enc, model.embed_patches(batch.patches), r))
        for a, b in zip(*results):
            assert np.array_equal(a.data, b.data)

    def test_pairwise_relpos(self, np):
        c = tiny_model_config(relpos_pairwise=True)
        out = SpatialVQAModel(c)(random_batch(c, np.random.default_rng(4)))
        assert out.vqa_logits.shape == (2, c.num_answers)

    def test_backward(self, np):
        c = tiny_model_config()
        model = SpatialVQAModel(c)
        loss = model_loss(model, random_batch(c, np.random.default_rng(5)))
        assert loss.shape == ()
        loss.backward()
        grads = dict((name, p.grad) for (name, p) in model.named_parameters())
        assert grads["vqa_head.weight"] is not None
        assert grads["relpos_proj.weight"] is not None
        assert grads["patch_embed.weight"] is not None
        assert np.all(np.isfinite(grads["word_emb.table"]))

    def test_no_grad(self, np):
        c = tiny_model_config()
        model = SpatialVQAModel(c)
        with nnkit.no_grad():
            loss = model_loss(model, random_batch(c, np.random.default_rng(6)))
        assert not loss.requires_grad


class TestChecks(object):
    @pytest.fixture
    def setup(self, np):
        c = tiny_model_config()
        return SpatialVQAModel(c), random_batch(c, np.random.default_rng(0))

    def test_too_long(self, np, setup):
        model, batch = setup
        batch.tokens = np.zeros((2, 20), dtype=int)
        batch.token_mask = np.zeros((2, 20), dtype=bool)
        with pytest.raises(errors.ShapeError):
            model(batch)

    def test_features(self, setup):
        model, batch = setup
        batch.obj_feats = batch.obj_feats[..., :-1]
        with pytest.raises(errors.ConfigError):
            model(batch)

    def test_missing_inputs(self, setup):
        model, batch = setup
        patches, batch.patches = batch.patches, None
        with pytest.raises(errors.ConfigError):
            model(batch)
        batch.patches, batch.relpos = patches, None
        with pytest.raises(errors.ConfigError):
            model(batch)

    def test_project_relpos(self, np, setup):
        model, batch = setup
        assert model.project_relpos(batch.relpos).shape == (2, 3, 8)
        with pytest.raises(errors.ShapeError):
            model.project_relpos(np.zeros((2, 3, 4)))
