"""Text-grid map presets.

Legend: ``#`` wall, ``.`` floor, ``P`` agent spawn point, ``R`` river cell
(Cleanup), ``O`` orchard cell where apples may spawn (Cleanup), ``A`` apple
site holding an apple at reset (Harvest).
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .grid import parse_map

CLEANUP_DEFAULT = """
##################
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR..P..P..OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR...P....OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR.P....P.OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR...P....OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR..P..P..OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
#RRRR........OOOO#
##################
"""

CLEANUP_DESK = """
###############
#RR.......OOOO#
#RR.P...P.OOOO#
#RR.......OOOO#
#RR...P...OOOO#
#RR.......OOOO#
#RR.P...P.OOOO#
#RR.......OOOO#
#RR...P...OOOO#
###############
"""

HARVEST_DEFAULT = """
######################################
#P........P........P........P.......P#
#....A........A........A........A....#
#...AAA......AAA......AAA......AAA...#
#..AAAAA....AAAAA....AAAAA....AAAAA..#
#...AAA......AAA......AAA......AAA...#
#....A........A........A........A....#
#....................................#
#P...................................#
#........A.........A........A........#
#.......AAA.......AAA......AAA.......#
#......AAAAA.....AAAAA....AAAAA......#
#.......AAA.......AAA......AAA.......#
#........A.........A........A........#
#.P...........P.........P..........P.#
######################################
"""

HARVEST_DESK = """
###############
#P..A.....A..P#
#..AAA...AAA..#
#.AAAAA.AAAAA.#
#..AAA...AAA..#
#P..A..A..A..P#
#.....AAA.....#
#....AAAAA....#
#P....AAA....P#
###############
"""

PRESETS = {
    "cleanup": {"default": CLEANUP_DEFAULT, "desk": CLEANUP_DESK},
    "harvest": {"default": HARVEST_DEFAULT, "desk": HARVEST_DESK},
}

KNOWN_CHARS = set("#.PROA")


def resolve_map(env_name: str, map_spec: str) -> list[str]:
    """A preset name or a literal multi-line text grid."""
    if "\n" not in map_spec.strip():
        try:
            map_spec = PRESETS[env_name][map_spec.strip()]
        except KeyError:
            raise ConfigError(f"unknown {env_name} map preset {map_spec!r}") from None
    rows = parse_map(map_spec)
    unknown = set("".join(rows)) - KNOWN_CHARS
    if unknown:
        raise ConfigError(f"unknown map characters {sorted(unknown)}")
    return rows


def cells(rows: list[str], chars: str) -> np.ndarray:
    """(H, W) bool mask of cells whose character is in ``chars``."""
    return np.array([[ch in chars for ch in row] for row in rows], dtype=bool)
