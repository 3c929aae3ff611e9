#!/usr/bin/env python3
"""
Wrapper script for the vb_hawkes.cli module.
This script allows running the command-line interface without installing the package.
"""

import sys
from pathlib import Path

# Add parent directory to path so we can import the package
sys.path.insert(0, str(Path(__file__).parent.parent))

# Import and run the main function from cli
from vb_hawkes.cli import main

if __name__ == "__main__":
    sys.exit(main())
