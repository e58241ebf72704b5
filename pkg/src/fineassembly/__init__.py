"""Toolkit for bimanual fine assembly with two six-axis arms.

Modules: ``model`` (robot and scene description), ``kinematics``,
``workspace`` (manipulability and base-distance layout), ``excitation`` and
``identification`` (end-effector payload estimation), ``force_control``,
``primitives``, ``planner`` and ``task`` (the pin insertion scenario).
"""

__version__ = "0.1.0"
