"""Bilinear co-decomposed actor-critic.

Policy and value share one low-dimensional multiplicative gating vector:
the action mean is a gated sum of basis policies and the Q-value is the
same gated sum over basis critics.  The package trains this model with
SAC on a directional point-mass navigation task, evaluates zero-shot
transfer to unseen goal directions, adapts the gating coefficients
online with a linear TD/SARSA rule, and ships analysis tooling for the
learned latent space.
"""

__version__ = "0.1.0"
