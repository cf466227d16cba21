import pytest

from relevance_grpo.exceptions import DataError
from relevance_grpo.jsonl import append_jsonl, drop_torn_tail, read_jsonl


def test_drop_torn_tail(tmp_path):
    path = tmp_path / 'log.jsonl'
    append_jsonl(path, {'seed': 0})
    with open(path, 'a', encoding='utf-8') as f:
        f.write('{"seed": 1, "te')

    with pytest.raises(DataError, match='invalid JSON'):
        list(read_jsonl(path))
    assert drop_torn_tail(path)
    assert list(read_jsonl(path)) == [{'seed': 0}]
    assert not drop_torn_tail(path)


@pytest.mark.parametrize('contents', ('', '{"seed": 0}\n'))
def test_complete_files_are_untouched(tmp_path, contents):
    path = tmp_path / 'log.jsonl'
    path.write_text(contents, encoding='utf-8')

    assert not drop_torn_tail(path)
    assert path.read_text(encoding='utf-8') == contents


def test_single_torn_line_empties_the_file(tmp_path):
    path = tmp_path / 'log.jsonl'
    path.write_text('{"seed"', encoding='utf-8')

    assert drop_torn_tail(path)
    assert path.read_text(encoding='utf-8') == ''
