"""
DCA-CRN Toolkit

Dynamic functional connectivity construction, a convolutional-recurrent
classifier with per-channel attention, and the cross-validation harness
around it
"""

__version__ = "0.1.0"
