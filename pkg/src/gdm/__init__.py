"""gdm: grayscale denoising for microscopy.

Self-supervised denoising of scanning-microscopy images. A compact U-Net
is trained on one or two non-paired images using blind-spot masking and a
composite objective of masked-pixel MSE and FFT-magnitude cosine
similarity; modality-specific FFT preprocessing builds the training
channels, and spectral peak-to-noise plus line-length metrics quantify the
result. Everything is reproducible from explicit seeds.
"""

__version__ = "0.1.0"

from . import errors, imagecore, metrics, model, objective, preprocess, synth, trainer

__all__ = [
    "__version__",
    "errors",
    "imagecore",
    "metrics",
    "model",
    "objective",
    "preprocess",
    "synth",
    "trainer",
]
