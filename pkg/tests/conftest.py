import numpy as np
import pytest

from dropspread.training import AnnotatedSample


def disk_mask(side: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2).astype(np.uint8)


def synthetic_sample(name: str, side: int, cy: int, cx: int, radius: int,
                     bright_spot: bool = False, seed: int = 0) -> AnnotatedSample:
    """A leaf-like frame: greenish background, bluish wet disk, mild noise."""
    rng = np.random.default_rng(seed)
    mask = disk_mask(side, cy, cx, radius)
    img = np.zeros((side, side, 3))
    img[..., 1] = 0.4
    img[..., 2] = 0.2 + 0.6 * mask
    img += rng.normal(0.0, 0.02, img.shape)
    if bright_spot:
        img[cy - 1:cy + 2, cx - 1:cx + 2, :] = 1.0
    return AnnotatedSample(np.clip(img, 0.0, 1.0), mask, name)


@pytest.fixture(scope="session")
def overfit_pair():
    """Two small annotated fixtures, one with a specular spot inside the wet area."""
    return [
        synthetic_sample("spot", 32, 16, 16, 9, bright_spot=True, seed=1),
        synthetic_sample("plain", 32, 20, 10, 6, seed=2),
    ]
