"""Monocular tiny-obstacle discovery on road scenes.

Scene-prior regions narrow the search space, multistride sliding windows turn
enhanced edge maps into scored proposals, and a pair of regression forests
fuses obstacle-vs-road and obstacle-vs-background evidence into per-pixel
obstacle probability.
"""

__version__ = "0.1.0"
