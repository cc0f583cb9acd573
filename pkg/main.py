#!/usr/bin/env python3
"""
Word Confidence Lab - Entry Point
Runs the command-line pipeline (gen, train-asr, decode, label, train-conf, eval, ablate, report)
"""

from confidence_lab.cli import main

if __name__ == "__main__":
    main()
