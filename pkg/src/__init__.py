"""
ArbolVisual - Clasificación jerárquica con árboles visuales aprendidos
(distancia rápida entre categorías, clustering espectral, SVM por arista y búsqueda N-best)
"""

__version__ = "0.2.0"
