from __future__ import annotations

import math
from functools import total_ordering


@total_ordering
class Vec2:
    __slots__ = ("x", "y")

    def __init__(self, x=0.0, y=0.0):
        self.x = x
        self.y = y

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    def __eq__(self, other):
        return (self.x, self.y) == (other.x, other.y)

    def __lt__(self, other):
        return self.norm() < other.norm()

    def norm(self):
        return math.hypot(self.x, self.y)

    def dot(self, other):
        return self.x * other.x + self.y * other.y

    def rotate(self, angle):
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(self.x * c - self.y * s, self.x * s + self.y * c)


def lerp(a, b, t):
    return a + (b - a) * t


def centroid(points):
    if not points:
        raise ValueError("no points")
    sx = sum(p.x for p in points)
    sy = sum(p.y for p in points)
    return Vec2(sx / len(points), sy / len(points))


ORIGIN = Vec2()
