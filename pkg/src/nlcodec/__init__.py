"""nlcodec: a desk-scale learned image codec.

Variational autoencoder transforms with non-local attention blocks, a
hyperprior plus autoregressive masked-3D-convolution entropy model, a
bit-exact range coder, rate-distortion training, and PSNR / MS-SSIM /
BD-rate evaluation.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
