"""
sts-lab - a desk-scale Seed-to-Seed translation laboratory

DDIM inversion and sampling with classifier-free guidance, a cycle-consistent
translator in seed space, a seed-informativeness probe and the ablation and
metric harness, testable against a closed-form Gaussian-mixture oracle.
"""

__version__ = "0.1.0"
