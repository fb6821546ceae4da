import numpy as np

from src.nets import tape as T
from src.utils.errors import InvalidInputError
from src.wct.linalg import EIG_FLOOR, covariance, matrix_power_sym


def whiten_image(image, floor: float = EIG_FLOOR):
    """Decorrelate the channels of an H x W x C image.

    Subtracts the per-channel mean and multiplies by C^{-1/2} of the channel
    covariance (eigenvalues floored at ``floor``). A constant image maps to
    zeros. Differentiable when ``image`` is a tape tensor.
    """
    h, w, c = image.shape
    if h * w < 4:
        raise InvalidInputError(f"whiten_image needs at least 4 pixels, got {h * w}")
    if isinstance(image, T.Tensor):
        pixels = T.reshape(image, (h * w, c))
        centered = T.sub(pixels, T.mean(pixels, axis=0, keepdims=True))
        inv_sqrt = matrix_power_sym(covariance(pixels), -0.5, floor)
        return T.reshape(T.matmul(centered, inv_sqrt), (h, w, c))
    pixels = np.asarray(image, dtype=np.float64).reshape(h * w, c)
    centered = pixels - pixels.mean(axis=0, keepdims=True)
    inv_sqrt = matrix_power_sym(covariance(pixels), -0.5, floor)
    return (centered @ inv_sqrt).reshape(h, w, c)
