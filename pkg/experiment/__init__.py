"""
Cross-validation, training, metrics, statistics and inspection
"""
