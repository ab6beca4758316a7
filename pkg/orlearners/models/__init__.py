from orlearners.models.base import (
    Family,
    LossBreakdown,
    RepLearnerSpec,
    RepresentationNetwork,
    TrainingBatch,
    display_name,
)
from orlearners.models.bnn import BNN
from orlearners.models.tarnet import CFR, TARNet
from orlearners.models.weighted import BWCFR, CFRISW, RCFR

__all__ = [
    "BNN",
    "BWCFR",
    "CFR",
    "CFRISW",
    "RCFR",
    "Family",
    "LossBreakdown",
    "RepLearnerSpec",
    "RepresentationNetwork",
    "TARNet",
    "TrainingBatch",
    "display_name",
]
