"""Instance discrimination with feature decorrelation, guided by a background dataset."""

__version__ = "0.1.0"
