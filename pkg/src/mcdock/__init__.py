"""Multi-criteria algorithm selection for molecular docking, downstream of feature extraction."""

from .evaluation import (GatedMetricSpec, Method, cross_validate, gated_success, kfold_split,
                         paired_significance, sbs_algorithm, vbs_selection)
from .losses import LossConfig, bce_loss, composite_loss, ndcg_loss2, pl_loss
from .model import ArchitectureSpec, TrainConfig, init_decoder, select, train
from .scoring import (LabelMatrix, PerformanceRecord, ScoreConfig, build_label_matrix,
                      composite_score, pb_score, rmsd_score)

__version__ = "0.1.0"
