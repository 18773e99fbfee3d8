"""
Build velocity fields from their declarative specs.
"""

from pathlib import Path
from typing import Any

from flow_edit_lab.config import logger
from flow_edit_lab.errors import InvalidConfigError
from flow_edit_lab.fields.analytic import (
    ConstantField,
    ContractingSpiralField,
    LinearSkewField,
    TimeCurvedField,
)
from flow_edit_lab.fields.base import VelocityField
from flow_edit_lab.fields.cfm import load_checkpoint
from flow_edit_lab.schemas.fields import (
    ConstantFieldSpec,
    ContractingSpiralFieldSpec,
    FieldSpec,
    LinearSkewFieldSpec,
    TimeCurvedFieldSpec,
    TrainedFieldSpec,
)


def make_field(spec: FieldSpec) -> VelocityField:
    """
    Instantiate the field a spec describes.

    Raises:
        InvalidConfigError: If the spec kind is unknown.
    """
    common: dict[str, Any] = {}
    if not isinstance(spec, TrainedFieldSpec):
        common = {"label_offsets": spec.label_offsets, "radius": spec.radius}

    if isinstance(spec, ConstantFieldSpec):
        field: VelocityField = ConstantField(spec.velocity, **common)
    elif isinstance(spec, LinearSkewFieldSpec):
        field = LinearSkewField(spec.omega, **common)
    elif isinstance(spec, ContractingSpiralFieldSpec):
        field = ContractingSpiralField(spec.rate, spec.omega, **common)
    elif isinstance(spec, TimeCurvedFieldSpec):
        field = TimeCurvedField(
            matrix=spec.matrix,
            skew_rate=spec.skew_rate,
            amplitude=spec.amplitude,
            frequency=spec.frequency,
            **common,
        )
    elif isinstance(spec, TrainedFieldSpec):
        field = load_checkpoint(Path(spec.checkpoint))
    else:
        msg = "unknown field kind"
        logger.error(msg, extra={"spec": repr(spec)})
        raise InvalidConfigError(msg, kind=getattr(spec, "kind", None))

    logger.debug("Field created", extra={"kind": field.descriptor["kind"]})
    return field
