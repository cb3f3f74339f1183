"""Reference parameter sets: the two synthetic patients and the policy-structure model."""

from .model import PatientParams


def _half_bound_x0(b: float) -> float:
    return 0.5 / (1.0 - b)


PATIENT_1 = PatientParams(
    c_low=0.7, lambda_low=0.4, lambda_high=1.0, b=0.8, x0=_half_bound_x0(0.8),
    gamma_low=0.5, gamma_high=1.0, alpha=0.95,
)

PATIENT_2 = PatientParams(
    c_low=0.1, lambda_low=0.2, lambda_high=1.0, b=0.8, x0=_half_bound_x0(0.8),
    gamma_low=0.4, gamma_high=1.0, alpha=0.95,
)

PATIENTS = {"patient1": PATIENT_1, "patient2": PATIENT_2}


def structure_model(c_low: float) -> PatientParams:
    """Model whose optimal policy changes shape as ``c_low`` moves over 0.1-0.3.

    x0 is irrelevant for the full-information policy and set to 0.
    """
    return PatientParams(
        c_low=c_low, lambda_low=0.7, lambda_high=0.8, b=0.9, x0=0.0,
        gamma_low=0.5, gamma_high=1.0, alpha=0.95,
    )
