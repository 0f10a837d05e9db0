# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - core library
"""
