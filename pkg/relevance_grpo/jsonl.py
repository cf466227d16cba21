"""JSON Lines reading and atomic artifact writing."""
import contextlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, TextIO, Union

from .exceptions import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']


def dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def read_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    """Yield one object per non-blank line."""
    try:
        f = open(path, encoding='utf-8')
    except OSError as e:
        raise DataError(f'Cannot open {path}: {e}') from e

    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.decoder.JSONDecodeError as e:
                raise DataError(f'{path}:{lineno}: invalid JSON: {e}') from e
            if not isinstance(record, dict):
                raise DataError(f'{path}:{lineno}: expected a JSON object')
            yield record


@contextlib.contextmanager
def atomic_open(path: PathLike) -> Iterator[TextIO]:
    """Write to a temporary sibling file and rename it over ``path`` on success."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{target.name}.', dir=str(target.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            yield f
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    count = 0
    with atomic_open(path) as f:
        for record in records:
            f.write(dumps(record))
            f.write('\n')
            count += 1
    logger.debug('Wrote %d records to %s', count, path)
    return count


def append_jsonl(path: PathLike, record: Dict[str, Any]) -> None:
    """Append a single line; used for resumable trajectory logs."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a', encoding='utf-8') as f:
        f.write(dumps(record))
        f.write('\n')


def drop_torn_tail(path: PathLike) -> bool:
    """Truncate a last line that has no newline; True if one was dropped."""
    with open(path, 'rb+') as f:
        data = f.read()
        if not data or data.endswith(b'\n'):
            return False
        f.truncate(data.rfind(b'\n') + 1)
    return True


def write_json(path: PathLike, data: Any) -> None:
    with atomic_open(path) as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write('\n')
