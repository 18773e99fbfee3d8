"""
Velocity fields: analytic catalog, trained CFM model and guidance wrappers.
"""

from flow_edit_lab.fields.analytic import (
    AnalyticField,
    ConstantField,
    ContractingSpiralField,
    LinearSkewField,
    TimeCurvedField,
    analytic_delta_max,
)
from flow_edit_lab.fields.base import CountingField, VelocityField
from flow_edit_lab.fields.cfm import (
    CfmModel,
    CfmPair,
    cfm_grad_check,
    cfm_loss,
    cfm_train,
    load_checkpoint,
    save_checkpoint,
)
from flow_edit_lab.fields.factory import make_field
from flow_edit_lab.fields.guidance import cfg_velocity, cfg_velocity_src_anchored, generate

__all__ = [
    "AnalyticField",
    "CfmModel",
    "CfmPair",
    "ConstantField",
    "ContractingSpiralField",
    "CountingField",
    "LinearSkewField",
    "TimeCurvedField",
    "VelocityField",
    "analytic_delta_max",
    "cfg_velocity",
    "cfg_velocity_src_anchored",
    "cfm_grad_check",
    "cfm_loss",
    "cfm_train",
    "generate",
    "load_checkpoint",
    "make_field",
    "save_checkpoint",
]
