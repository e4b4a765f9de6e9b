#!/usr/bin/env python3
"""Conformant sidecar serving a zero-weight toy model (uniform outputs)."""

import sys

from redtide.oracle import serve_model
from redtide.toydet import ToyDetectorModel

if __name__ == "__main__":
    model = ToyDetectorModel.zeros(("vessel", "buoy"))
    sys.exit(serve_model(model, sys.stdin, sys.stdout))
