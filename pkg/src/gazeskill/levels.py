import enum


class SkillLevel(enum.IntEnum):
    """Player skill group; integer order gives Low < High < Pro."""

    LOW = 0
    HIGH = 1
    PRO = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "SkillLevel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown skill level {text!r}; expected low, high or pro") from None

    def __str__(self) -> str:
        return self.label
