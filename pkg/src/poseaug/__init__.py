"""Semi-supervised keypoint estimation at desk scale.

Subpackages by responsibility: :mod:`poseaug.geometry` (affine maps,
heatmap rendering/decoding), :mod:`poseaug.augment` (hard augmentations and
the combination validator), :mod:`poseaug.model` (a tiny conv net with
analytic gradients), :mod:`poseaug.ssltrain` (consistency losses and the
train loops), :mod:`poseaug.metrics` (OKS mAP, PCK/PCKh),
:mod:`poseaug.analysis` (singular-value spectrum entropy),
:mod:`poseaug.data` (COCO-schema ingestion and synthetic figures) and
:mod:`poseaug.cli` (the ``poseaug`` command).
"""

__version__ = "0.1.0"
