#!/usr/bin/env python
"""Utilidad de línea de comandos de Django; acepta también ``plot-data`` como alias."""
from essvi_mm.cli import main


if __name__ == '__main__':
    main()
