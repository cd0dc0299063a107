"""clothkit: single-shot 2.5D clothing-category recognition pipeline.

Modules: depthio (PGM IO, manifests, synthetic surfaces), bspline
(fitting/evaluation core), geometry (curvature + shape index), topology
(ridges, contours, TSD), features (SI/LBP/TSD/BSP blocks), coding
(codebook + weighted LLC), classify (SMO SVM + CV reporting), pipeline
(end-to-end wiring), cli (batch front end).
"""

__version__ = "0.1.0"
