# tidb/core/__init__.py
# This file makes 'core' a Python sub-package of 'tidb'.
