"""Slot recycling for batched private inference over packed HE and GMW shares."""
from .ring import DEFAULT_N, DEFAULT_P, ConvShape, Modulus
from .planner import SlotParams, plan_online, plan_offline, plan_dot

__all__ = ["DEFAULT_N", "DEFAULT_P", "ConvShape", "Modulus", "SlotParams",
           "plan_online", "plan_offline", "plan_dot"]
