"""Physical constants (exact SI values)."""
from scipy.constants import c as SPEED_OF_LIGHT, h as PLANCK

HC = PLANCK * SPEED_OF_LIGHT  # J m
