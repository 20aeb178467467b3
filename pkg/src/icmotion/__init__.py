"""icmotion: a desk-scale in-context motion generation stack.

Procedural locomotion data, a frame-level task compiler, four context
conditioning architectures over a small flow-matching motion transformer,
and the matching evaluation pipeline.
"""

__version__ = "0.1.0"
