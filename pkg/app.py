"""
app.py — Main entry point for the event-based analog front-end simulator.
Run with:  python app.py {encode,decode,measure} --help
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
