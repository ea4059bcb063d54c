#!/usr/bin/env python3
"""
arbol - Punto de entrada de la línea de comandos

Uso:
    python3 arbol.py synth --out datos.bin --categories 64 --per-class 120 --dim 32
    python3 arbol.py train --data datos.bin --model modelo.hvtm --branching 8 --depth 2
    python3 arbol.py predict --model modelo.hvtm --queries consultas.csv --mode beam --beam 5
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from src.interface.cli import main


if __name__ == "__main__":
    sys.exit(main())
