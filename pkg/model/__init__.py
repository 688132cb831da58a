"""
The convolutional-recurrent classifier with per-channel attention reconstruction
"""
