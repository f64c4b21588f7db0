# tidb/__init__.py
# Tempo-invariant downbeat tracking toolkit.

__version__ = "0.3.0"
