from typing import Any, Callable


class Match:
    """Compares equal to any value accepted by ``predicate``.

    Used in ``assert_called_with`` where only part of an argument matters,
    e.g. the ``Authorization`` header of a request or the name of a setting.
    """

    def __init__(self, predicate: Callable[[Any], bool], description: str = ''):
        self.predicate = predicate
        self.description = description

    def __eq__(self, other: Any) -> bool:
        return bool(self.predicate(other))

    def __repr__(self) -> str:
        return f'<Match {self.description or self.predicate!r}>'
