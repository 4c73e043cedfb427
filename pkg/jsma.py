#!/usr/bin/env python3
"""
Saliency-map attack toolkit - main entry point
Trains small classifiers, distills them and attacks them with the JSMA family
"""

import sys
import os

# Add repository root to path so the src package resolves from any cwd
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
