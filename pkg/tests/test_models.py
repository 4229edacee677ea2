import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference_check
from thermask.models import (
    CAEConfig,
    CheckpointError,
    ClassifierConfig,
    ViTConfig,
    build_cae,
    build_classifier_from_encoder,
    build_vit,
    checkpoint_from_model,
    count_parameters,
    encode,
    load_checkpoint,
    save_checkpoint,
    spt_tokenize,
)


def probe(n=2, side=128, seed=0):
    return torch.rand(n, 1, side, side, generator=torch.Generator().manual_seed(seed))


def vit_parameter_count(c: ViTConfig) -> int:
    """Closed-form parameter count of the SPT ViT, written out layer by layer."""
    layer_norm = lambda d: 2 * d  # noqa: E731
    linear = lambda i, o, bias=True: i * o + (o if bias else 0)  # noqa: E731
    tokenizer = layer_norm(c.token_dim) + linear(c.token_dim, c.dim)
    block = (
        layer_norm(c.dim) * 2
        + linear(c.dim, 3 * c.dim, bias=False)
        + linear(c.dim, c.dim)
        + linear(c.dim, c.mlp_dim)
        + linear(c.mlp_dim, c.dim)
    )
    head = layer_norm(c.dim) + linear(c.dim, c.n_classes)
    return tokenizer + c.num_tokens * c.dim + c.depth * block + head


class TestCAE:
    def test_reconstruction_shape(self):
        model = build_cae(seed=0).eval()
        with torch.no_grad():
            assert model(probe()).shape == (2, 1, 128, 128)

    def test_latent_shape(self):
        model = build_cae(seed=0)
        assert CAEConfig().latent_shape == (128, 16, 16)
        assert encode(model, probe(3)).shape == (3, 128, 16, 16)

    def test_zero_input_in_range(self):
        with torch.no_grad():
            out = build_cae(seed=0).eval()(torch.zeros(1, 1, 128, 128))
        assert out.min() >= 0 and out.max() <= 1

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-1e3, 1e3), st.integers(0, 1000))
    def test_output_range_any_input(self, scale, seed):
        model = build_cae(CAEConfig(input_size=16, ladder=(4, 8)), seed=0)
        x = scale * torch.randn(2, 1, 16, 16, generator=torch.Generator().manual_seed(seed))
        with torch.no_grad():
            out = model.train()(x)
        assert out.min() >= 0 and out.max() <= 1

    def test_batchnorm_placement(self):
        model = build_cae(seed=0)
        convs = [m for m in model.modules() if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d))]
        norms = [m for m in model.modules() if isinstance(m, torch.nn.BatchNorm2d)]
        assert len(norms) == len(convs) - 1
        assert isinstance(list(model.decoder)[-2], torch.nn.ConvTranspose2d)

    def test_encode_deterministic(self):
        model = build_cae(seed=0).train()
        x = probe()
        assert torch.equal(encode(model, x), encode(model, x))
        assert model.training

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            encode(build_cae(seed=0), torch.zeros(1, 1, 64, 64))

    def test_config_errors(self):
        with pytest.raises(ValueError):
            CAEConfig(input_size=100)
        with pytest.raises(ValueError):
            CAEConfig(ladder=())

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(1, 3), st.sampled_from([1, 3]))
    def test_shape_propagation(self, ladder, mult, kernel):
        side = mult * 2 ** len(ladder)
        cfg = CAEConfig(input_size=side, ladder=tuple(ladder), kernel_size=kernel)
        model = build_cae(cfg, seed=0)
        x = torch.rand(2, 1, side, side)
        z = encode(model, x)
        assert tuple(z.shape[1:]) == cfg.latent_shape
        with torch.no_grad():
            assert model.eval()(x).shape == x.shape
        # each decoder stage undoes the matching encoder stage
        shapes_in, h = [], x
        for layer in model.encoder:
            if isinstance(layer, torch.nn.Conv2d):
                shapes_in.append(tuple(h.shape[1:]))
            h = layer(h)
        shapes_out = []
        for layer in model.decoder:
            h = layer(h)
            if isinstance(layer, torch.nn.ConvTranspose2d):
                shapes_out.append(tuple(h.shape[1:]))
        assert shapes_out == shapes_in[::-1]


class TestClassifier:
    def test_softmax_rows(self):
        model = build_classifier_from_encoder(build_cae(seed=0), ClassifierConfig(seed=1))
        probs = model.eval().predict_proba(probe(4))
        assert probs.shape == (4, 3)
        assert (probs >= 0).all()
        assert torch.allclose(probs.sum(dim=1), torch.ones(4, dtype=probs.dtype), atol=1e-6)

    def test_encoder_copied_exactly(self):
        cae = build_cae(seed=0)
        x = probe()
        for source in (cae, checkpoint_from_model(cae)):
            clf = build_classifier_from_encoder(source, ClassifierConfig(seed=5)).eval()
            with torch.no_grad():
                assert torch.equal(clf.encoder(x), encode(cae, x))

    def test_random_init_ablation_differs(self):
        cae = build_cae(seed=0)
        clf = build_classifier_from_encoder(cae, ClassifierConfig(seed=5, encoder_init="RANDOM")).eval()
        with torch.no_grad():
            assert not torch.equal(clf.encoder(probe()), encode(cae, probe()))

    def test_head_depends_on_seed(self):
        cae = build_cae(seed=0)
        a = build_classifier_from_encoder(cae, ClassifierConfig(seed=1))
        b = build_classifier_from_encoder(cae, ClassifierConfig(seed=2))
        assert not torch.equal(a.head[1].weight, b.head[1].weight)
        assert [m.out_features for m in a.head if isinstance(m, torch.nn.Linear)] == [256, 128, 3]

    def test_wrong_checkpoint_kind(self):
        with pytest.raises(ValueError):
            build_classifier_from_encoder(checkpoint_from_model(build_vit(ViTConfig(image_size=16, dim=16, heads=2), seed=0)))

    def test_class_count_fixed(self):
        with pytest.raises(ValueError):
            ClassifierConfig(n_classes=4)


class TestSPT:
    def test_default_shape(self):
        assert spt_tokenize(probe(1), 8).shape == (1, 256, 320)

    def test_single_patch(self):
        assert spt_tokenize(torch.rand(1, 1, 8, 8), 8).shape == (1, 1, 320)

    def test_zero_image(self):
        assert torch.count_nonzero(spt_tokenize(torch.zeros(2, 1, 32, 32), 8)) == 0

    def test_indivisible(self):
        with pytest.raises(ValueError):
            spt_tokenize(torch.zeros(1, 1, 30, 30), 8)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([2, 4, 8]), st.integers(1, 6), st.integers(1, 2))
    def test_closed_form(self, patch, per_side, channels):
        side = patch * per_side
        tokens = spt_tokenize(torch.rand(1, channels, side, side), patch)
        assert tokens.shape == (1, (side // patch) ** 2, patch * patch * 5 * channels)

    def test_first_copy_is_the_image(self):
        x = torch.arange(64.0).reshape(1, 1, 8, 8)
        # tokens are laid out (row, col, channel) with the five copies as channels
        assert torch.equal(spt_tokenize(x, 8)[0, 0].reshape(8, 8, 5)[..., 0], x[0, 0])

    def test_shift_direction(self):
        # the (-1, -1) copy moves content up-left by half a patch
        x = torch.zeros(1, 1, 8, 8)
        x[0, 0, 4, 4] = 1.0
        shifted = spt_tokenize(x, 8)[0, 0].reshape(8, 8, 5)[..., 1]
        assert shifted[0, 0] == 1.0 and shifted.sum() == 1.0


class TestViT:
    def test_logits_shape(self):
        model = build_vit(seed=0).eval()
        with torch.no_grad():
            assert model(probe(3)).shape == (3, 3)

    def test_projection_dim(self):
        model = build_vit(seed=0)
        assert model.tokenizer.proj.in_features == 320 and model.tokenizer.proj.out_features == 512

    def test_eval_deterministic(self):
        model = build_vit(seed=0).eval()
        with torch.no_grad():
            assert torch.equal(model(probe()), model(probe()))

    def test_parameter_count(self):
        assert vit_parameter_count(ViTConfig()) == 6_604_419
        assert count_parameters(build_vit(seed=0)) == 6_604_419

    @pytest.mark.parametrize("cfg", [ViTConfig(image_size=32, patch_size=4, dim=64, depth=2, heads=4, mlp_dim=32), ViTConfig(image_size=16, dim=24, heads=3, spt=False)])
    def test_parameter_count_small(self, cfg):
        assert count_parameters(build_vit(cfg, seed=0)) == vit_parameter_count(cfg)

    def test_config_errors(self):
        with pytest.raises(ValueError):
            ViTConfig(dim=500)
        with pytest.raises(ValueError):
            ViTConfig(image_size=100)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["cae", "classifier", "vit"])
    def test_round_trip(self, tmp_path, kind):
        if kind == "cae":
            model, x = build_cae(CAEConfig(input_size=32, ladder=(4, 8)), seed=0), probe(side=32)
        elif kind == "classifier":
            model, x = build_classifier_from_encoder(build_cae(CAEConfig(input_size=32, ladder=(4, 8)), seed=0)), probe(side=32)
        else:
            model, x = build_vit(ViTConfig(image_size=32, dim=32, heads=4, mlp_dim=16, depth=1), seed=0), probe(side=32)
        model.eval()
        save_checkpoint(model, tmp_path / "m.ckpt", {"seed": 7, "epochs_completed": 3})
        ckpt = load_checkpoint(tmp_path / "m.ckpt")
        assert ckpt.kind == kind
        assert ckpt.metadata == {"seed": 7, "epochs_completed": 3}
        with torch.no_grad():
            assert torch.equal(ckpt.to_model()(x), model(x))

    def test_header_is_plain_text(self, tmp_path):
        save_checkpoint(build_cae(CAEConfig(input_size=8, ladder=(2,)), seed=0), tmp_path / "m.ckpt")
        lines = (tmp_path / "m.ckpt").read_bytes().split(b"\n", 2)
        assert lines[0] == b"THERMASK-CKPT v1"
        assert int(lines[1]) > 0

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(build_cae(CAEConfig(input_size=8, ladder=(2,)), seed=0), path)
        path.write_bytes(path.read_bytes().replace(b"THERMASK-CKPT v1", b"THERMASK-CKPT v9", 1))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_corrupt_blob(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(build_cae(CAEConfig(input_size=8, ladder=(2,)), seed=0), path)
        data = bytearray(path.read_bytes())
        data[-3] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncated_and_foreign(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(build_cae(CAEConfig(input_size=8, ladder=(2,)), seed=0), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        path.write_bytes(b"hello")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_gradient_check_tiny_cae(mode):
    torch.manual_seed(0)
    model = build_cae(CAEConfig(input_size=8, ladder=(2,)), seed=3).double()
    model.train(mode == "train")
    x = torch.rand(4, 1, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    worst = finite_difference_check(model, x)
    assert set(worst) == {n for n, _ in model.named_parameters()}
    assert max(worst.values()) <= 1e-3, worst
