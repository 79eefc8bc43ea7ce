import logging

from rest_framework import status
from rest_framework.exceptions import APIException, NotFound, ValidationError

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CONTRACT_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class ScatteringError(APIException):
    """
    Base class for numeric failures raised by the laboratory modules.

    The ``stage`` attribute names the module operation that failed, so the
    experiment runner can report it next to the error message.
    """
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = 'Numeric failure.'
    default_code = 'numeric_failure'
    stage = 'unknown'

    def __init__(self, detail=None, code=None, stage=None):
        super().__init__(detail=detail, code=code)
        if stage is not None:
            self.stage = stage


class InvalidPotentialError(ScatteringError):
    default_detail = 'Potential evaluation returned non-finite values.'
    default_code = 'invalid_potential'
    stage = 'validate_potential'


class InvalidFormFactorError(ScatteringError):
    default_detail = 'Form factor evaluation returned non-finite values.'
    default_code = 'invalid_form_factor'
    stage = 'validate_form_factor'


class ResolutionError(ScatteringError):
    default_detail = 'Quadrature did not converge under grid refinement.'
    default_code = 'resolution'


class SingularPointError(ScatteringError):
    default_detail = 'Kernel evaluated at coinciding points; use the corrected diagonal.'
    default_code = 'singular_point'
    stage = 'kernel'


class GeometryError(ScatteringError):
    default_detail = 'Source support overlaps the computational grid.'
    default_code = 'geometry'


class OverlapError(GeometryError):
    default_detail = 'Target lies inside the shifted source support.'
    default_code = 'overlap'
    stage = 'incident_spherical'


class DomainError(ScatteringError):
    default_detail = 'Requested points lie outside the admissible domain.'
    default_code = 'domain'


class IterationLimitError(ScatteringError):
    default_detail = 'Linear solver reached its iteration limit.'
    default_code = 'iteration_limit'


class DegenerateSourceError(ScatteringError):
    default_detail = 'Source far-field coefficient vanishes in the incident direction.'
    default_code = 'degenerate_source'
    stage = 'normalization_bD'


class BlowUpError(ScatteringError):
    default_detail = 'Time evolution became unstable.'
    default_code = 'blow_up'
    stage = 'evolve'


class MatchingError(ScatteringError):
    default_detail = 'Radial matching is degenerate; increase r_max.'
    default_code = 'matching'
    stage = 'phase_shifts'


class TruncationError(ScatteringError):
    default_detail = 'Partial-wave series truncated too early; increase L_max.'
    default_code = 'truncation'
    stage = 'partial_wave_amplitude'


def exit_code_for(exc: Exception) -> int:
    """
    Map an exception raised during an experiment to the process exit code.

    :param exc: raised exception.
    :return: 2 for usage/config errors, 3 for numeric failures.
    """
    if isinstance(exc, (ValidationError, NotFound)):
        return EXIT_USAGE
    if isinstance(exc, ScatteringError):
        logger.error('Numeric failure at stage %s: %s', exc.stage, exc.detail)
    return EXIT_NUMERIC
