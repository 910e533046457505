"""Computer-aided diagnosis toolkit for proximal femur fracture radiographs:
ROI localization, 2/3-class classification, scale-agreement verification,
and embedding-based case retrieval, with a CLI and a reader service."""

__version__ = "0.1.0"
