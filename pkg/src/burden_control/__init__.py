"""Adaptive selection of low- and high-burden treatments under a latent engagement model."""

from .model import Action, ParameterError, PatientParams, adherence_prob, reward, state_bound, step_dynamics
from .patients import PATIENT_1, PATIENT_2, PATIENTS

__all__ = [
    "Action", "ParameterError", "PatientParams", "adherence_prob", "reward", "state_bound",
    "step_dynamics", "PATIENT_1", "PATIENT_2", "PATIENTS",
]
__version__ = "0.1.0"
