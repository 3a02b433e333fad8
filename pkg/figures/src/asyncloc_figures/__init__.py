"""Offline figure rendering for asyncloc experiment CSV files."""

from .render import FigureJob, SchemaError, render, render_to_file

__all__ = ["FigureJob", "SchemaError", "render", "render_to_file"]
