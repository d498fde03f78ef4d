"""Gradient-free adaptation of frozen black-box image classifiers.

The toolkit learns visual prompts in both the spatial domain (a frame around
the image) and the frequency domain (a low-frequency DCT perturbation) using
only input/output queries against the classifier, and sharpens the returned
probabilities with trainable prototypes on the probability simplex.

Main entry points:

- :func:`prompt_tuner.trainer.train` / :func:`prompt_tuner.trainer.evaluate`
- :func:`prompt_tuner.trainer.ablation_matrix`
- :mod:`prompt_tuner.cli` (``prompt-tuner`` console script)
"""

from .config import DatasetSpec, OracleSpec, RunConfig, ScheduleSpec
from .prompter import Geometry, PrompterParams
from .simplex import PrototypeSet
from .trainer import Checkpoint, ablation_matrix, evaluate, train
from .zo import OptimizerState, Schedule

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DatasetSpec",
    "Geometry",
    "OptimizerState",
    "OracleSpec",
    "PrompterParams",
    "PrototypeSet",
    "RunConfig",
    "Schedule",
    "ScheduleSpec",
    "ablation_matrix",
    "evaluate",
    "train",
]
