"""Direct-summation PSNR/SSIM on BT.601 luma for the two-block test pattern."""
import math

import numpy as np


def luma(img):
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def ssim(a, b, k=8):
    x, y = luma(a.astype(np.float64)), luma(b.astype(np.float64))
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for r in range(x.shape[0] - k + 1):
        for c in range(x.shape[1] - k + 1):
            u, v = x[r:r + k, c:c + k], y[r:r + k, c:c + k]
            mu, mv = u.mean(), v.mean()
            vu, vv = ((u - mu) ** 2).mean(), ((v - mv) ** 2).mean()
            cov = ((u - mu) * (v - mv)).mean()
            vals.append((2 * mu * mv + c1) * (2 * cov + c2) / ((mu * mu + mv * mv + c1) * (vu + vv + c2)))
    return float(np.mean(vals))


def psnr(a, b):
    d = luma(a.astype(np.float64)) - luma(b.astype(np.float64))
    return 10 * math.log10(255 ** 2 / (d ** 2).mean())


img = np.zeros((16, 16, 3), np.uint8)
img[:, :8] = (40, 90, 200)
img[:, 8:] = (220, 180, 30)
inv = 255 - img
print(repr(ssim(img, inv)), repr(psnr(img, inv)))
print(repr(10 * math.log10(255 ** 2)))
