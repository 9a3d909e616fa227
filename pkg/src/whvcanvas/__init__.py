"""whvcanvas: a What-How-Value idea canvas with graph-guided transformations."""

__version__ = "0.1.0"
