"""
KSTPP Toolkit - utilities
"""
