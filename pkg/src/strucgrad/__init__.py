"""Structured prediction energy networks trained with implicit hypergradients."""

from .analysis import analyze_hessian
from .data import (MLCDataset, SeqDataset, SynthSpec, gen_synth, load_conll, load_mlc,
                   save_mlc, split)
from .estimator import EnergyMultiLabelClassifier, EnergySequenceTagger
from .implicit import HypergradReport, IhvpConfig, biased_grad_phi, implicit_grad_phi, neumann_ihvp
from .tasks import MLCTask, QuadraticTask, SeqTask
from .tensor import Layout, NumericalError, ParamVector, ScalarFn, cross_hvp, grad, hvp
from .trainer import (TrainConfig, TrainingAborted, train, train_alternating, train_implicit,
                      train_mbce)

__version__ = "0.1.0"

__all__ = [
    "EnergyMultiLabelClassifier", "EnergySequenceTagger", "HypergradReport", "IhvpConfig",
    "Layout", "MLCDataset", "MLCTask", "NumericalError", "ParamVector", "QuadraticTask",
    "ScalarFn", "SeqDataset", "SeqTask", "SynthSpec", "TrainConfig", "TrainingAborted",
    "analyze_hessian", "biased_grad_phi", "cross_hvp", "gen_synth", "grad", "hvp",
    "implicit_grad_phi", "load_conll", "load_mlc", "neumann_ihvp", "save_mlc", "split",
    "train", "train_alternating", "train_implicit", "train_mbce",
]
