"""
Pydantic schemas for run configs, reports and trajectory files.
"""
