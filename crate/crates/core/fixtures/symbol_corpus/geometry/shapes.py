import math
from abc import ABC, abstractmethod


class Shape(ABC):
    @abstractmethod
    def area(self):
        ...

    @abstractmethod
    def perimeter(self):
        ...

    def describe(self):
        return f"{type(self).__name__}(area={self.area():.2f})"


class Circle(Shape):
    def __init__(self, r):
        self.r = r

    def area(self):
        return math.pi * self.r ** 2

    def perimeter(self):
        return 2 * math.pi * self.r


class Rectangle(Shape):
    def __init__(self, w, h):
        self.w, self.h = w, h

    def area(self):
        return self.w * self.h

    def perimeter(self):
        return 2 * (self.w + self.h)

    class Builder:
        def __init__(self):
            self.w = self.h = 0

        def width(self, w):
            self.w = w
            return self

        def height(self, h):
            self.h = h
            return self

        def build(self):
            return Rectangle(self.w, self.h)


def total_area(shapes):
    return sum(s.area() for s in shapes)


async def load_shapes(source):
    async for row in source:
        yield Circle(row)
