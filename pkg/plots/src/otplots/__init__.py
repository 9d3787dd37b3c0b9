"""Figure rendering for pathflow run directories."""

from .render import FigureSpec, RenderError, render_run

__all__ = ["FigureSpec", "RenderError", "render_run"]
__version__ = "0.1.0"
