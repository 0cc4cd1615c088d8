"""Smart-meter battery charging policies with minimal information leakage"""

__version__ = "0.1.0"
