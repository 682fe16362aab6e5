"""Figure renderer for renyi-qkd CSV outputs."""

__version__ = "0.1.0"

from .render import FigureSpec, OutputError, RenderError, load_rows, render

__all__ = [
    "FigureSpec",
    "OutputError",
    "RenderError",
    "load_rows",
    "render",
    "__version__",
]
