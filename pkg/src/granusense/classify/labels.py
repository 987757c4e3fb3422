import enum


class ClassLabel(str, enum.Enum):
    TRIANGLE_CLEAN = "TriangleClean"
    SQUARE_CLEAN = "SquareClean"
    HEXAGON_CLEAN = "HexagonClean"
    CIRCLE_CLEAN = "CircleClean"
    TRIANGLE_SAND = "TriangleSand"
    SQUARE_SAND = "SquareSand"
    HEXAGON_SAND = "HexagonSand"
    CIRCLE_SAND = "CircleSand"
    ZERO_CONTACT = "ZeroContact"

    @property
    def index(self) -> int:
        return CLASS_NAMES.index(self.value)

    @property
    def shape(self) -> str | None:
        """Shape kind name, or None for zero contact."""
        if self is ClassLabel.ZERO_CONTACT:
            return None
        return self.value.removesuffix("Clean").removesuffix("Sand")

    @property
    def sandy(self) -> bool:
        return self.value.endswith("Sand")


CLASS_NAMES = tuple(label.value for label in ClassLabel)
