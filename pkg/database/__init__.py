"""
Persistence modules for the run registry
"""
