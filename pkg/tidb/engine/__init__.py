# tidb/engine/__init__.py
# This file makes 'engine' a Python sub-package of 'tidb'.
