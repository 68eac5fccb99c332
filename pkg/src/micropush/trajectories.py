"""Reference trajectories: bundled letter strokes, circles, and the S-curve.

Letters are single continuous polyline strokes, 100 points each and 150 um
tall, stored in data/letters.json. Running this module as a script rebuilds
the bundled file from the stroke definitions below.
"""

from __future__ import annotations

import csv
import json
import math
from importlib import resources

import numpy as np

LETTER_HEIGHT = 150.0
LETTER_POINTS = 100


def _arc(center, radius, th0, th1, n):
    th = np.linspace(math.radians(th0), math.radians(th1), n)
    return np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)


def _line(p0, p1, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))


def _resample(points: np.ndarray, n: int) -> np.ndarray:
    """Arc-length resampling to exactly n points."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(targets, s, points[:, 0])
    out[:, 1] = np.interp(targets, s, points[:, 1])
    return out


def _stroke(pieces) -> np.ndarray:
    dense = [np.asarray(p) for p in pieces]
    joined = [dense[0]]
    for p in dense[1:]:
        joined.append(p[1:] if np.allclose(p[0], joined[-1][-1]) else p)
    return _resample(np.vstack(joined), LETTER_POINTS)


def _build_letters() -> dict[str, np.ndarray]:
    h = LETTER_HEIGHT
    letters = {
        "I": _stroke([_line((0, 0), (0, h), 200)]),
        "C": _stroke([_arc((75, 75), 75, 50, 310, 400)]),
        "R": _stroke([
            _line((0, 0), (0, h), 150),
            _arc((0, 112.5), 37.5, 90, -90, 150),
            _line((0, 75), (52, 0), 120),
        ]),
        "A": _stroke([
            _line((0, 0), (45, h), 160),
            _line((45, h), (90, 0), 160),
            _line((90, 0), (67.5, 75), 90),
            _line((67.5, 75), (22.5, 75), 60),
        ]),
    }
    return letters


def rebuild_letters_file(path) -> None:
    doc = {name: pts.tolist() for name, pts in _build_letters().items()}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def letter(name: str, height: float = LETTER_HEIGHT, origin=(0.0, 0.0)) -> np.ndarray:
    """Load a bundled letter stroke, scaled to the height and shifted to origin."""
    name = name.upper()
    with resources.files("micropush.data").joinpath("letters.json").open() as fh:
        doc = json.load(fh)
    if name not in doc:
        raise KeyError(f"no bundled letter {name!r}; have {sorted(doc)}")
    pts = np.asarray(doc[name], dtype=float)
    pts = pts * (height / LETTER_HEIGHT)
    return pts + np.asarray(origin, dtype=float)


def circle(radius: float, center=(0.0, 0.0), spacing: float = 8.0) -> np.ndarray:
    """Closed circular trajectory starting and ending at angle zero."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = max(16, int(math.ceil(2.0 * math.pi * radius / spacing)))
    th = np.linspace(0.0, 2.0 * math.pi, n + 1)
    c = np.asarray(center, dtype=float)
    return np.stack([c[0] + radius * np.cos(th), c[1] + radius * np.sin(th)], axis=1)


def s_curve(radius: float = 28.0, origin=(0.0, 0.0), spacing: float = 6.0) -> np.ndarray:
    """Two stacked half-circles traversed bottom to top; tangent-continuous."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = max(10, int(math.ceil(math.pi * radius / spacing)))
    lobe1 = _arc((0.0, radius), radius, -90, 90, n)
    lobe2 = _arc((0.0, 3.0 * radius), radius, -90, 90, n)
    lobe2[:, 0] *= -1.0
    pts = np.vstack([lobe1, lobe2[1:]])
    return pts + np.asarray(origin, dtype=float)


def load_waypoints_csv(path) -> np.ndarray:
    """Waypoint file: CSV with an x,y header."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip().lower() for h in header[:2]] != ["x", "y"]:
            raise ValueError("waypoint file must start with an x,y header")
        pts = [[float(row[0]), float(row[1])] for row in r]
    if not pts:
        raise ValueError("waypoint file is empty")
    return np.asarray(pts)


if __name__ == "__main__":
    import pathlib

    target = pathlib.Path(__file__).parent / "data" / "letters.json"
    target.parent.mkdir(exist_ok=True)
    rebuild_letters_file(target)
    print(f"wrote {target}")
