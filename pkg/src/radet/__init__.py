"""Robustness-asymmetry toolkit: theory testbed and desk-scale image detector."""

from .bound import (BoundReport, BoundRow, BoundSweepConfig, DvCheck,
                    GapEstimate, KlEstimate, bound_sweep, delta_gap,
                    dv_hoeffding_check, kl_mc, pick_probe_eps, theorem_bound)
from .data import ToyImageDataset, ToyTaskConfig, make_toy_dataset
from .degrade import gaussian_blur, jpeg_like
from .detector.checkpoint import load_checkpoint, save_checkpoint
from .detector.embeddings import (EmbeddingSet, predict_from_embeddings,
                                  read_embeddings, write_embeddings,
                                  write_embeddings_csv)
from .detector.losses import loss_bce, loss_comp, loss_ra
from .detector.model import RADetector, gradcheck, perturb
from .detector.residual import median_residual
from .encoders import (EncoderHandle, energy_profile, estimate_B, jacobian,
                       jacobian_energy, make_anisotropic, make_linear,
                       make_quadratic, make_smooth_net, make_zero)
from .errors import (ConfigurationError, DataFormatError, DomainError,
                     NumericError, RadetError)
from .evalharness import EvalReport, EvalRow, evaluate, robustness_sweep
from .manifold import (GenModel, ManifoldModel, ManifoldSpec, TrainingSet,
                       TubeMixture, gen_logdensity, gen_sample, make_manifold,
                       make_training_set, sample_real, tube_logdensity,
                       tube_sample)
from .metrics import (ApTieBounds, accuracy, ap_tie_bounds, average_precision)
from .shift import (DifferentialShift, ProbeLaw, ShiftCurve, ShiftEstimate,
                    cosine_sim, dca, diff_vector, differential_shift,
                    expansion_residual, l2_distance, shift_mc, shift_scan)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
