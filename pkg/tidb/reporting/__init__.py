# tidb/reporting/__init__.py
# This file makes 'reporting' a Python sub-package of 'tidb'.
