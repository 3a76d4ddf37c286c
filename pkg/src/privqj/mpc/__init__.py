"""Secret sharing, oblivious transfer, AND triples and the DReLU sub-protocol."""
from .sharing import ArithSharePair, BoolSharePair, reconstruct, share, xor_arith_form
from .drelu import drelu_and_count, drelu_protocol

__all__ = ["ArithSharePair", "BoolSharePair", "share", "reconstruct", "xor_arith_form",
           "drelu_protocol", "drelu_and_count"]
