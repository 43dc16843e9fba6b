"""Semi-automatic region annotation engine.

Merges region proposals from multiple detector sources, generates open-world
semantic tags through role-specialized annotator services, ranks tags with
mask-modulated alignment scores, routes samples through a human verification
service, and iterates the whole cycle with pluggable train/finetune hooks.
"""

__version__ = "0.1.0"
