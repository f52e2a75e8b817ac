"""
__init__.py
-----------
This package provides the afc-dlcz command-line front end and its run manifests.
"""
