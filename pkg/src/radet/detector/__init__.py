"""Detector subpackage: networks, losses, estimator, persistence."""

from .checkpoint import load_checkpoint, save_checkpoint
from .embeddings import (EmbeddingSet, predict_from_embeddings,
                         read_embeddings, write_embeddings,
                         write_embeddings_csv)
from .losses import loss_bce, loss_comp, loss_ra
from .model import RADetector, gradcheck, perturb
from .nets import DrpNet, FrozenImageEncoder, Heads
from .residual import median_residual
