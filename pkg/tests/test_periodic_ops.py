import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tilemat import periodic_ops as pops


def conv_brute_force(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Independent oracle: cross-correlation with explicit modular indexing."""
    n, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    r, s = kh // 2, kw // 2
    out = np.zeros((n, cout, h, ww))
    for b in range(n):
        for co in range(cout):
            for i in range(h):
                for j in range(ww):
                    acc = 0.0
                    for ci in range(cin):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += x[b, ci, (i + a - r) % h, (j + bb - s) % ww] \
                                    * w[co, ci, a, bb]
                    out[b, co, i, j] = acc
    return out


def conv_dft(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Frequency-domain oracle: circular correlation via conjugate spectra."""
    h, ww = x.shape[-2:]
    kh, kw = w.shape[-2:]
    r, s = kh // 2, kw // 2
    kpad = np.zeros((h, ww))
    for a in range(kh):
        for b in range(kw):
            kpad[(a - r) % h, (b - s) % ww] = w[0, 0, a, b]
    return np.real(np.fft.ifft2(np.fft.fft2(x[0, 0]) * np.conj(np.fft.fft2(kpad))))[None, None]


class TestCyclicTranslate:
    def test_identity(self):
        x = torch.rand(2, 3, 8, 8)
        assert torch.equal(pops.cyclic_translate(x, (0, 0)), x)

    def test_full_wrap(self):
        x = torch.rand(1, 1, 4, 8)
        assert torch.equal(pops.cyclic_translate(x, (4, 8)), x)

    def test_hand_enumerated(self):
        x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).view(1, 1, 2, 2)
        out = pops.cyclic_translate(x, (0, 1))
        expected = torch.tensor([[2.0, 1.0], [4.0, 3.0]]).view(1, 1, 2, 2)
        assert torch.equal(out, expected)

    @given(dy1=st.integers(-8, 8), dx1=st.integers(-8, 8),
           dy2=st.integers(-8, 8), dx2=st.integers(-8, 8))
    @settings(max_examples=30, deadline=None)
    def test_composition_adds_shifts(self, dy1, dx1, dy2, dx2):
        x = torch.arange(64.0).view(1, 1, 8, 8)
        a = pops.cyclic_translate(pops.cyclic_translate(x, (dy1, dx1)), (dy2, dx2))
        b = pops.cyclic_translate(x, (dy1 + dy2, dx1 + dx2))
        assert torch.equal(a, b)

    def test_bijective(self):
        x = torch.rand(1, 2, 8, 8)
        back = pops.cyclic_translate(pops.cyclic_translate(x, (3, 5)), (-3, -5))
        assert torch.equal(back, x)


class TestCircularConv:
    def test_delta_kernel_identity(self):
        x = torch.rand(1, 1, 8, 8)
        w = torch.zeros(1, 1, 3, 3)
        w[0, 0, 1, 1] = 1.0
        assert torch.allclose(pops.circular_conv2d(x, w), x)

    def test_constant_eigenfunction(self):
        w = torch.rand(1, 2, 3, 3)
        x = torch.full((1, 2, 8, 8), 0.7)
        out = pops.circular_conv2d(x, w)
        expected = 0.7 * w.sum()
        assert torch.allclose(out, expected.expand_as(out), atol=1e-5)

    def test_brute_force_oracle(self):
        x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        w = torch.randn(1, 1, 3, 3, dtype=torch.float64)
        out = pops.circular_conv2d(x, w)
        expected = conv_brute_force(x.numpy(), w.numpy())
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-10)

    def test_dft_oracle(self):
        x = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        w = torch.randn(1, 1, 5, 5, dtype=torch.float64)
        out = pops.circular_conv2d(x, w).numpy()
        expected = conv_dft(x.numpy(), w.numpy())
        np.testing.assert_allclose(out, expected, rtol=1e-4)

    @given(dy=st.integers(-16, 16), dx=st.integers(-16, 16))
    @settings(max_examples=25, deadline=None)
    def test_shift_equivariance(self, dy, dx):
        x = torch.rand(1, 2, 8, 8)
        w = torch.randn(3, 2, 3, 3)
        a = pops.circular_conv2d(pops.cyclic_translate(x, (dy, dx)), w)
        b = pops.cyclic_translate(pops.circular_conv2d(x, w), (dy, dx))
        assert (a - b).abs().max() <= 1e-5

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            pops.circular_conv2d(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 2, 2))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            pops.circular_conv2d(torch.rand(1, 2, 4, 4), torch.rand(1, 3, 3, 3))

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError, match="power of two"):
            pops.circular_conv2d(torch.rand(1, 1, 6, 6), torch.rand(1, 1, 3, 3))


class TestCircularUpsample:
    def test_constant_preserved(self):
        x = torch.full((1, 2, 4, 4), 0.3)
        out = pops.circular_upsample2x(x)
        assert out.shape == (1, 2, 8, 8)
        assert torch.allclose(out, torch.full_like(out, 0.3), atol=1e-6)

    def test_impulse_response_oracle(self):
        x = torch.zeros(1, 1, 4, 4)
        x[0, 0, 0, 0] = 1.0
        out = pops.circular_upsample2x(x)

        # independent oracle: zero-stuff then wrap-convolve with the
        # normalized outer-product kernel
        k1 = np.array([1.0, 3.0, 3.0, 1.0]) / 4.0  # per-branch sum 1
        k2 = np.outer(k1, k1)
        up = np.zeros((8, 8))
        up[0, 0] = 1.0
        expected = np.zeros((8, 8))
        lo = (len(k1) - 1) // 2  # matches the conv alignment
        for i in range(8):
            for j in range(8):
                for a in range(4):
                    for b in range(4):
                        expected[i, j] += up[(i + a - lo) % 8, (j + b - lo) % 8] * k2[a, b]
        np.testing.assert_allclose(out[0, 0].numpy(), expected, atol=1e-6)

    def test_shift_equivariance_exact(self):
        x = torch.rand(1, 1, 8, 8)
        a = pops.circular_upsample2x(pops.cyclic_translate(x, (3, 5)))
        b = pops.cyclic_translate(pops.circular_upsample2x(x), (6, 10))
        assert float((a - b).abs().max()) == 0.0


class TestCircularDownsample:
    def test_constant_preserved(self):
        x = torch.full((1, 1, 8, 8), 0.9)
        out = pops.circular_downsample2x(x)
        assert out.shape == (1, 1, 4, 4)
        assert torch.allclose(out, torch.full_like(out, 0.9), atol=1e-6)

    def test_even_shift_equivariance_exact(self):
        x = torch.rand(1, 2, 16, 16)
        a = pops.circular_downsample2x(pops.cyclic_translate(x, (6, 4)))
        b = pops.cyclic_translate(pops.circular_downsample2x(x), (3, 2))
        assert float((a - b).abs().max()) == 0.0

    def test_checkerboard_box_blur(self):
        ij = torch.arange(8)
        checker = ((ij[:, None] + ij[None, :]) % 2).float().view(1, 1, 8, 8)
        out = pops.circular_downsample2x(checker, blur=[1.0, 1.0])
        assert torch.allclose(out, torch.full_like(out, 0.5), atol=1e-6)

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            pops.circular_downsample2x(torch.rand(1, 1, 1, 1))


class TestModulatedConv:
    def test_unit_style_no_demod_matches_plain(self):
        x = torch.rand(2, 3, 8, 8)
        w = torch.randn(4, 3, 3, 3)
        style = torch.ones(2, 3)
        out = pops.modulated_circular_conv2d(x, w, style, demodulate=False)
        assert torch.allclose(out, pops.circular_conv2d(x, w), atol=1e-5)

    def test_demodulated_filters_unit_norm(self):
        w = torch.randn(4, 3, 3, 3)
        style = torch.rand(1, 3) + 0.5
        ws = w.unsqueeze(0) * style.view(1, 1, 3, 1, 1)
        ws = ws * torch.rsqrt(ws.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        norms = ws.pow(2).sum(dim=(2, 3, 4)).sqrt()
        assert torch.allclose(norms, torch.ones_like(norms), atol=1e-3)

    def test_two_channel_toy_oracle(self):
        x = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        w = torch.randn(3, 2, 3, 3, dtype=torch.float64)
        style = torch.tensor([[1.5, 0.25]], dtype=torch.float64)
        out = pops.modulated_circular_conv2d(x, w, style, demodulate=True)
        # oracle composed from the brute-force conv oracle
        ws = (w.numpy() * style.numpy()[0][None, :, None, None])
        d = 1.0 / np.sqrt((ws ** 2).sum(axis=(1, 2, 3)) + 1e-8)
        ws = ws * d[:, None, None, None]
        expected = conv_brute_force(x.numpy(), ws)
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-8)

    def test_style_length_mismatch(self):
        with pytest.raises(ValueError, match="style"):
            pops.modulated_circular_conv2d(
                torch.rand(1, 2, 4, 4), torch.randn(3, 2, 3, 3), torch.ones(1, 4))


def test_composition_stays_periodic():
    from tilemat.diagnostics import seam_score
    x = torch.rand(1, 3, 32, 32)
    w1 = torch.randn(8, 3, 3, 3) * 0.2
    w2 = torch.randn(3, 8, 3, 3) * 0.2
    y = pops.circular_conv2d(x, w1)
    y = pops.circular_upsample2x(y)
    y = torch.relu(y)
    y = pops.circular_downsample2x(y)
    y = pops.circular_conv2d(y, w2)
    assert 0.7 <= seam_score(y[0]) <= 1.4
