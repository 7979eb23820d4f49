"""Torus-topology tensor ops.

Every op here treats the spatial dimensions of a (N, C, H, W) tensor as
periodic: index arithmetic is modulo H and W, so there is no boundary and
any composition of these ops maps periodic inputs to periodic outputs.
Spatial sizes are restricted to powers of two so the 2x resolution ladder
stays exact.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

# Binomial low-pass used by default for the 2x resampling ops.
DEFAULT_BLUR = (1.0, 3.0, 3.0, 1.0)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def check_periodic(x: torch.Tensor) -> None:
    """Validate the (N, C, H, W) power-of-two contract."""
    if x.dim() != 4:
        raise ValueError(f"expected rank-4 (N,C,H,W) tensor, got rank {x.dim()}")
    if not (_is_pow2(x.shape[2]) and _is_pow2(x.shape[3])):
        raise ValueError(f"spatial size {tuple(x.shape[2:])} is not a power of two")


def cyclic_translate(x: torch.Tensor, shift: tuple[int, int]) -> torch.Tensor:
    """Translate by (dy, dx) pixels with wrap-around.

    out[..., i, j] = x[..., (i - dy) % H, (j - dx) % W]
    """
    dy, dx = shift
    return torch.roll(x, shifts=(int(dy), int(dx)), dims=(-2, -1))


def _circular_pad(x: torch.Tensor, pad: tuple[int, int, int, int]) -> torch.Tensor:
    # F.pad(mode="circular") caps padding at the input size; tile first when
    # a kernel is wider than the map itself (tiny test tensors).
    left, right, top, bottom = pad
    h, w = x.shape[-2], x.shape[-1]
    while max(top, bottom) >= h:
        x = torch.cat([x, x], dim=-2)
        h *= 2
    while max(left, right) >= w:
        x = torch.cat([x, x], dim=-1)
        w *= 2
    return F.pad(x, (left, right, top, bottom), mode="circular")


def circular_conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    groups: int = 1,
) -> torch.Tensor:
    """Stride-1 cross-correlation with wrap-around indexing.

    Exactly equivariant to cyclic_translate for every integer shift.
    Kernel must be odd so the spatial size is preserved.
    """
    check_periodic(x)
    kh, kw = weight.shape[-2], weight.shape[-1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel size ({kh},{kw}) must be odd")
    if x.shape[1] != weight.shape[1] * groups:
        raise ValueError(
            f"input has {x.shape[1]} channels, kernel expects {weight.shape[1] * groups}"
        )
    pad = (kw // 2, kw // 2, kh // 2, kh // 2)
    return F.conv2d(_circular_pad(x, pad), weight, bias=bias, groups=groups)


def _blur_kernel_1d(blur, dtype, device) -> torch.Tensor:
    k = torch.as_tensor(blur, dtype=dtype, device=device)
    if k.dim() != 1:
        raise ValueError("blur kernel must be 1-D (applied separably)")
    return k


def _separable_circular_filter(x: torch.Tensor, k1d: torch.Tensor, phase: int) -> torch.Tensor:
    """Depthwise circular filtering with a separable kernel of any length.

    `phase` picks the padding split for even-length kernels.
    """
    c = x.shape[1]
    n = k1d.numel()
    lo = (n - 1) // 2 + phase
    hi = n - 1 - lo
    ky = k1d.view(1, 1, n, 1).expand(c, 1, n, 1)
    kx = k1d.view(1, 1, 1, n).expand(c, 1, 1, n)
    x = F.conv2d(_circular_pad(x, (0, 0, lo, hi)), ky, groups=c)
    x = F.conv2d(_circular_pad(x, (lo, hi, 0, 0)), kx, groups=c)
    return x


def circular_upsample2x(x: torch.Tensor, blur=DEFAULT_BLUR) -> torch.Tensor:
    """Zero-stuff by 2 then low-pass with wrap-around; (H, W) -> (2H, 2W).

    The separable kernel is normalized so each polyphase branch sums to 1,
    which keeps constants exactly constant and preserves the mean.
    """
    check_periodic(x)
    k = _blur_kernel_1d(blur, x.dtype, x.device)
    even = k[0::2].sum()
    odd = k[1::2].sum()
    if even <= 0 or odd <= 0 or not torch.isclose(even, odd):
        raise ValueError("blur kernel must have equal, positive even/odd tap sums")
    k = k / even  # per-axis DC gain 2, cancelling the zero-stuffing loss
    n, c, h, w = x.shape
    up = x.new_zeros(n, c, 2 * h, 2 * w)
    up[..., ::2, ::2] = x
    return _separable_circular_filter(up, k, phase=0)


def circular_downsample2x(x: torch.Tensor, blur=DEFAULT_BLUR) -> torch.Tensor:
    """Low-pass with wrap-around then decimate by 2; (H, W) -> (H/2, W/2)."""
    check_periodic(x)
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ValueError(f"spatial size {tuple(x.shape[2:])} must be even")
    k = _blur_kernel_1d(blur, x.dtype, x.device)
    k = k / k.sum()
    return _separable_circular_filter(x, k, phase=1)[..., ::2, ::2]


def modulated_circular_conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    style: torch.Tensor,
    demodulate: bool = True,
    eps: float = 1e-8,
) -> torch.Tensor:
    """StyleGAN2 weight (de)modulation realized with circular padding.

    weight: (Cout, Cin, k, k); style: (Cin,) or per-sample (N, Cin).
    Each input channel of the kernel is scaled by the style; with
    demodulation every output-channel filter is rescaled to unit L2 norm.
    """
    check_periodic(x)
    if style.dim() == 1:
        style = style.unsqueeze(0).expand(x.shape[0], -1)
    n = x.shape[0]
    cout, cin, kh, kw = weight.shape
    if style.shape != (n, cin):
        raise ValueError(f"style shape {tuple(style.shape)} does not match ({n},{cin})")
    w = weight.unsqueeze(0) * style.view(n, 1, cin, 1, 1)
    if demodulate:
        dcoef = torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + eps)
        w = w * dcoef
    # grouped conv: one kernel bank per batch element
    out = circular_conv2d(
        x.reshape(1, n * cin, x.shape[2], x.shape[3]),
        w.reshape(n * cout, cin, kh, kw),
        groups=n,
    )
    return out.view(n, cout, x.shape[2], x.shape[3])
