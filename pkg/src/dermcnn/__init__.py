"""dermcnn: a from-scratch dermoscopy lesion classification engine.

The pipeline covers metadata ingestion, reflection-artifact removal,
denoising, normalization, augmentation with class balancing, a small
convolutional network trained with Adam on binary cross-entropy, and a
metrics/ROC evaluation suite.  sklearn-style estimators in
:mod:`dermcnn.estimator` wrap the engine for pipeline composition; the
``dermcnn`` CLI drives it in batch mode.
"""

__version__ = "0.1.0"

from .estimator import (
    CnnLesionClassifier,
    Denoiser,
    ImageNormalizer,
    ImageResizer,
    ReflectionArtifactRemover,
)

__all__ = [
    "__version__",
    "CnnLesionClassifier",
    "Denoiser",
    "ImageNormalizer",
    "ImageResizer",
    "ReflectionArtifactRemover",
]
