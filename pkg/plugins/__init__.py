"""
Model-kind plugins, one directory per kind
"""
