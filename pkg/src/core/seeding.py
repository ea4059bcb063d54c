"""
Seeding - Derivación de semillas con nombre a partir de la semilla del usuario
"""
import hashlib

import numpy as np


def derive_seed(seed: int, tag: str, *parts) -> int:
    """
    Derivar una semilla de 64 bits para (seed, tag, parts...).
    Estable entre procesos y plataformas (no usa hash() de Python).
    """
    text = "/".join([str(int(seed)), tag] + [str(p) for p in parts])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, tag: str, *parts) -> np.random.Generator:
    """Generador numpy para un propósito con nombre"""
    return np.random.default_rng(derive_seed(seed, tag, *parts))
