import pytest
import torch

from blindvsr.kernel_net import KernelNet, KernelNetConfig, estimate_kernel

SMALL = dict(conv_channels=[8, 8, 16, 16], fc_hidden=32)


def test_output_is_normalized_kernel():
    torch.manual_seed(0)
    net = KernelNet(KernelNetConfig(**SMALL))
    k = estimate_kernel(net, torch.rand(3, 5, 3, 20, 24))
    assert k.shape == (3, 13, 13)
    assert torch.allclose(k.sum(dim=(-2, -1)), torch.ones(3), atol=1e-5)
    assert (k > 0).all()


def test_logit_count_is_k_squared():
    net = KernelNet(KernelNetConfig(kernel_size=7, temporal_radius=1, **SMALL))
    assert net.logits(torch.rand(2, 3, 3, 16, 16)).shape == (2, 49)
    assert net.features[0].in_channels == 9


def test_different_initializations_differ():
    window = torch.rand(1, 5, 3, 16, 16)
    torch.manual_seed(1)
    a = KernelNet(KernelNetConfig(**SMALL))(window)
    torch.manual_seed(2)
    b = KernelNet(KernelNetConfig(**SMALL))(window)
    assert (a - b).abs().max() >= 1e-8


def test_gradient_reaches_every_layer():
    torch.manual_seed(3)
    net = KernelNet(KernelNetConfig(**SMALL))
    k = net(torch.rand(2, 5, 3, 16, 16))
    target = torch.rand(13, 13)
    ((k - target / target.sum()) ** 2).sum().backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name


def test_window_from_frame_list():
    net = KernelNet(KernelNetConfig(temporal_radius=1, **SMALL))
    frames = [torch.rand(3, 12, 12) for _ in range(3)]
    assert estimate_kernel(net, frames).shape == (13, 13)


def test_mismatched_frames_rejected():
    net = KernelNet(KernelNetConfig(temporal_radius=1, **SMALL))
    with pytest.raises(ValueError):
        estimate_kernel(net, [torch.rand(3, 12, 12), torch.rand(3, 12, 10), torch.rand(3, 12, 12)])
    with pytest.raises(ValueError):
        net(torch.rand(1, 5, 3, 12, 12))


def test_average_pooling_variant():
    net = KernelNet(KernelNetConfig(pool="average", **SMALL))
    assert any(isinstance(m, torch.nn.AvgPool2d) for m in net.features)


@pytest.mark.parametrize("kw", [dict(kernel_size=12), dict(pool="median"), dict(conv_channels=[])])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        KernelNetConfig(**kw).validate()
