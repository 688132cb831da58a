"""
Dynamic functional connectivity construction from region time series
"""
