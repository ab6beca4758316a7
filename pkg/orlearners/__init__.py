"""OR-learners: representation learning with Neyman-orthogonal second-stage targets."""

__version__ = "1.0.0"
