# tidb/synth/__init__.py
# This file makes 'synth' a Python sub-package of 'tidb'.
