"""
flow-edit-lab: rectified-flow inversion and editing on analytic and toy-trained fields.
"""

__version__ = "0.1.0"
