#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - entry point
"""

import os
import sys

# project root on sys.path so core/, utils/ and plugins/ resolve from a checkout
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.cli import main as cli_main


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
