import numpy as np
import pytest
import torch

from blindvsr.degradation import decimate
from blindvsr.evaluation import psnr
from blindvsr.flow import FlowProviderConfig
from blindvsr.kernel_net import KernelNetConfig
from blindvsr.model import SelfBlindVSR
from blindvsr.restoration import FeatureExtractor, RestorationConfig, Restorer, upsample_aligned
from blindvsr.toy import panning_sequence, sample_image


def tiny_model(scale=4, n=2, feat=8, blocks=1, kernel_size=3, dtype=torch.float32, residual=True):
    torch.manual_seed(0)
    model = SelfBlindVSR(
        KernelNetConfig(kernel_size=kernel_size, conv_channels=[4, 4], pool_after=[1], fc_hidden=8, temporal_radius=n),
        FlowProviderConfig(levels=2, channels=4),
        RestorationConfig(n_resblocks=blocks, feat_channels=feat, extractor_blocks=1, scale=scale,
                          global_residual=residual),
    )
    return model.to(dtype)


class TestFeatureExtractor:
    def test_shape(self):
        ne = FeatureExtractor(3, 64, 2)
        assert ne(torch.rand(3, 17, 23)[None]).shape == (1, 64, 17, 23)

    def test_deterministic(self):
        ne = FeatureExtractor(3, 16, 1)
        x = torch.rand(1, 3, 8, 8)
        assert torch.equal(ne(x), ne(x.clone()))

    def test_nonlinear(self):
        torch.manual_seed(0)
        ne = FeatureExtractor(3, 16, 1)
        x = torch.rand(1, 3, 8, 8)
        assert not torch.allclose(ne(0.5 * x), 0.5 * ne(x))


class TestRestorer:
    def test_output_shape(self):
        ni = Restorer(RestorationConfig(n_resblocks=2, feat_channels=64, scale=4), temporal_radius=2)
        c = torch.rand(1, 64, 32, 32)
        out = ni(c, [torch.rand(1, 64, 32, 32) for _ in range(4)], torch.rand(1, 3, 32, 32))
        assert out.shape == (1, 3, 128, 128)

    @pytest.mark.parametrize("scale,size", [(2, 5), (4, 7), (1, 6)])
    def test_scale_contract(self, scale, size):
        model = tiny_model(scale=scale, n=1)
        out = model.restore_window(torch.rand(2, 3, 3, size, size + 1))
        assert out.shape == (2, 3, scale * size, scale * (size + 1))

    def test_wrong_neighbor_count(self):
        ni = Restorer(RestorationConfig(n_resblocks=1, feat_channels=8), temporal_radius=2)
        with pytest.raises(ValueError):
            ni(torch.rand(1, 8, 4, 4), [torch.rand(1, 8, 4, 4)] * 3, torch.rand(1, 3, 4, 4))

    def test_neighbor_order_matters(self):
        torch.manual_seed(0)
        ni = Restorer(RestorationConfig(n_resblocks=1, feat_channels=8, scale=2), temporal_radius=2)
        c = torch.rand(1, 8, 6, 6)
        nb = [torch.rand(1, 8, 6, 6) for _ in range(4)]
        frame = torch.rand(1, 3, 6, 6)
        assert not torch.allclose(ni(c, nb, frame), ni(c, nb[::-1], frame))

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            RestorationConfig(scale=3).validate()

    def test_gradient_reaches_all_paths(self):
        model = tiny_model()
        # make the flow net non-trivially connected before differentiating
        with torch.no_grad():
            for p in model.nf.parameters():
                p.add_(0.05 * torch.randn_like(p))
        model.restore_window(torch.rand(1, 5, 3, 12, 12)).mean().backward()
        for group in ("ni", "ne", "nf"):
            grads = [p.grad for p in getattr(model, group).parameters() if p.grad is not None]
            assert grads and sum(g.abs().sum() for g in grads) > 0, group

    def test_end_to_end_finite_differences(self):
        model = tiny_model(scale=2, n=1, dtype=torch.float64)
        with torch.no_grad():
            for p in model.nf.parameters():
                p.add_(0.05 * torch.randn_like(p))
        window = torch.rand(1, 3, 3, 8, 8, dtype=torch.float64)
        weights = torch.rand(1, 3, 16, 16, dtype=torch.float64)

        def loss():
            return (model.restore_window(window) * weights).sum()

        model.zero_grad()
        loss().backward()
        rng = np.random.default_rng(0)
        params = [(n, p) for n, p in model.named_parameters() if not n.startswith("nk")]
        eps = 1e-6
        analytic, numeric = [], []
        for n, p in [params[i] for i in rng.choice(len(params), 8, replace=False)]:
            flat = p.data.view(-1)
            for j in rng.choice(flat.numel(), 2, replace=False):
                orig = flat[j].item()
                with torch.no_grad():
                    flat[j] = orig + eps
                    fp = loss().item()
                    flat[j] = orig - eps
                    fm = loss().item()
                    flat[j] = orig
                numeric.append((fp - fm) / (2 * eps))
                analytic.append(p.grad.view(-1)[j].item())
        analytic, numeric = np.array(analytic), np.array(numeric)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) < 1e-3


def test_upsample_aligned_inverts_decimation():
    y = torch.rand(2, 3, 7, 9, dtype=torch.float64)
    for scale, offset in [(2, 0), (2, 1), (4, 0), (4, 3)]:
        assert torch.allclose(decimate(upsample_aligned(y, scale, offset), scale, offset), y, atol=1e-12)


def test_near_identity_learning_at_scale_one():
    """Delta kernel and scale 1: the auxiliary task is the identity map."""
    from blindvsr.config import ExperimentConfig
    from blindvsr.training import Trainer, WindowDataset, super_resolve

    cfg = ExperimentConfig()
    cfg.degradation.scale = cfg.restoration.scale = 1
    cfg.kernel_net.kernel_size = 1
    cfg.kernel_net.conv_channels, cfg.kernel_net.fc_hidden = [4, 4], 8
    cfg.kernel_net.temporal_radius = cfg.train.temporal_radius = 1
    cfg.restoration.feat_channels, cfg.restoration.n_resblocks, cfg.restoration.extractor_blocks = 8, 1, 1
    cfg.flow.levels, cfg.flow.channels = 2, 4
    cfg.train.batch_size, cfg.train.patch_size, cfg.train.lr_main = 4, 24, 1e-3
    img = sample_image("astronaut")
    seq = panning_sequence(img[::4, ::4], 6, 24, (1, 1))
    data = WindowDataset.from_arrays([seq], 1)
    trainer = Trainer(cfg, data)
    trainer.run(max_steps=150)
    frames = data.lr[0]
    hr, _ = super_resolve(trainer.model, frames)
    scores = [psnr(x.permute(1, 2, 0).double().numpy(), frames[i].permute(1, 2, 0).double().numpy())
              for i, x in enumerate(hr)]
    assert min(scores) > 40
