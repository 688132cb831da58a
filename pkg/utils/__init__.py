"""
Utility modules for the DCA-CRN toolkit
"""
