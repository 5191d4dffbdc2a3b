import math


def area(r):
    return math.pi * r * r


def scale(xs, k=2):
    out = []
    for x in xs:
        out.append(x * k)
    return out
