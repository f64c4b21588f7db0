# tidb/models/__init__.py
# This file makes 'models' a Python sub-package of 'tidb'.
