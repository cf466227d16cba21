"""Tag grammar of model responses and the verbatim-extraction rule.

A response is a fixed sequence of ``<tag>body</tag>`` blocks, every tag exactly
once, in order, separated only by whitespace. Parsing never raises: malformed
text yields a :class:`ParseFailure` naming the first rule it violates, in this
order of checks:

1. each grammar tag opens and closes exactly once (``MissingTag``/``DuplicateTag``)
2. blocks follow the grammar order without nesting (``WrongOrder``)
3. nothing but whitespace outside the blocks (``TrailingContent``)
4. bodies are non-empty after trimming (``EmptyField``), scores are a bare
   ``0``/``1``/``2`` (``BadScoreToken``)
"""
import enum
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

NONE_SENTINEL = 'none'
SCORE_TOKENS = {'0': 0, '1': 1, '2': 2}

THINK = 'think'
INTENT = 'intent'
EXTRACT = 'extract'
SCORE = 'score'

#: Placeholder shown for each tag in the "strictly follow the format" block
TAG_PLACEHOLDERS = {
    THINK: '[the reasoning content]',
    INTENT: '[inferred user intent]',
    EXTRACT: '[fragment/none]',
    SCORE: '[0/1/2]',
}


class FailureKind(str, enum.Enum):
    MISSING_TAG = 'MissingTag'
    DUPLICATE_TAG = 'DuplicateTag'
    WRONG_ORDER = 'WrongOrder'
    TRAILING_CONTENT = 'TrailingContent'
    BAD_SCORE_TOKEN = 'BadScoreToken'
    EMPTY_FIELD = 'EmptyField'


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    position: int
    tag: Optional[str] = None

    def __str__(self):
        where = f' <{self.tag}>' if self.tag else ''
        return f'{self.kind.value}{where} at offset {self.position}'


@dataclass(frozen=True)
class Grammar:
    """Ordered tag set a response must consist of."""

    name: str
    tags: Tuple[str, ...]

    def __contains__(self, tag: str) -> bool:
        return tag in self.tags

    def format_block(self) -> str:
        return '\n'.join(
            f'<{tag}> {TAG_PLACEHOLDERS[tag]} </{tag}>' for tag in self.tags
        )


ROUND1 = Grammar('round1', (THINK, INTENT))
ROUND2 = Grammar('round2', (THINK, EXTRACT, SCORE))
ROUND1_NO_INTENT = Grammar('round1-no-intent', (THINK,))
ROUND2_NO_EXTRACT = Grammar('round2-no-extract', (THINK, SCORE))
SINGLE_ROUND = Grammar('single-round', (THINK, INTENT, EXTRACT, SCORE))
#: think+score only; the answer format of the UMbrela-style single prompt
BASELINE = Grammar('baseline', (THINK, SCORE))


@dataclass(frozen=True)
class Round1Output:
    think: str
    #: None only for grammars without an <intent> block
    intent: Optional[str] = None


@dataclass(frozen=True)
class Round2Output:
    think: str
    score: int
    #: None is the none-sentinel, or the grammar has no <extract> block
    extract: Optional[str] = None
    intent: Optional[str] = None


ParseResult = Union[Round1Output, Round2Output, ParseFailure]


def parse_tagged(text: str, grammar: Grammar) -> Union[Dict[str, str], ParseFailure]:
    """Split ``text`` into trimmed tag bodies, or report the first violation."""
    spans = []
    for tag in grammar.tags:
        open_tag, close_tag = f'<{tag}>', f'</{tag}>'
        open_at = text.find(open_tag)
        close_at = text.find(close_tag)
        if open_at < 0 or close_at < 0:
            return ParseFailure(FailureKind.MISSING_TAG, len(text), tag)

        second_open = text.find(open_tag, open_at + len(open_tag))
        second_close = text.find(close_tag, close_at + len(close_tag))
        if second_open >= 0 or second_close >= 0:
            candidates = [p for p in (second_open, second_close) if p >= 0]
            return ParseFailure(FailureKind.DUPLICATE_TAG, min(candidates), tag)

        spans.append((tag, open_at, open_at + len(open_tag), close_at))

    cursor = 0
    for tag, open_at, body_start, close_at in spans:
        if open_at < cursor or close_at < body_start:
            return ParseFailure(FailureKind.WRONG_ORDER, open_at, tag)
        cursor = close_at + len(tag) + 3

    gaps = [(0, spans[0][1])]
    gaps += [
        (prev[3] + len(prev[0]) + 3, nxt[1]) for prev, nxt in zip(spans, spans[1:])
    ]
    last = spans[-1]
    gaps.append((last[3] + len(last[0]) + 3, len(text)))
    for start, end in gaps:
        stray = _first_non_space(text, start, end)
        if stray is not None:
            return ParseFailure(FailureKind.TRAILING_CONTENT, stray)

    bodies = {}
    for tag, open_at, body_start, close_at in spans:
        body = text[body_start:close_at].strip()
        if not body:
            return ParseFailure(FailureKind.EMPTY_FIELD, body_start, tag)
        if tag == SCORE and body not in SCORE_TOKENS:
            return ParseFailure(FailureKind.BAD_SCORE_TOKEN, body_start, tag)
        bodies[tag] = body
    return bodies


def _first_non_space(text: str, start: int, end: int) -> Optional[int]:
    segment = text[start:end]
    stripped = segment.lstrip()
    if not stripped:
        return None
    return start + len(segment) - len(stripped)


def _extract_value(body: Optional[str]) -> Optional[str]:
    if body is None or body.lower() == NONE_SENTINEL:
        return None
    return body


def parse_round1(
    text: str, grammar: Grammar = ROUND1
) -> Union[Round1Output, ParseFailure]:
    bodies = parse_tagged(text, grammar)
    if isinstance(bodies, ParseFailure):
        return bodies
    return Round1Output(think=bodies[THINK], intent=bodies.get(INTENT))


def parse_round2(
    text: str, grammar: Grammar = ROUND2
) -> Union[Round2Output, ParseFailure]:
    bodies = parse_tagged(text, grammar)
    if isinstance(bodies, ParseFailure):
        return bodies
    return Round2Output(
        think=bodies[THINK],
        score=SCORE_TOKENS[bodies[SCORE]],
        extract=_extract_value(bodies.get(EXTRACT)),
        intent=bodies.get(INTENT),
    )


def validate_extract(extract: Optional[str], document: str) -> bool:
    """True iff ``extract`` is the none-sentinel or a verbatim span of ``document``.

    Only outer whitespace of the fragment is ignored; punctuation and case
    must match byte for byte.
    """
    if extract is None:
        return True
    fragment = extract.strip()
    if not fragment:
        return False
    if fragment.lower() == NONE_SENTINEL:
        return True
    return fragment in document


def render_round1(output: Round1Output, grammar: Grammar = ROUND1) -> str:
    return _render(grammar, {THINK: output.think, INTENT: output.intent})


def render_round2(output: Round2Output, grammar: Grammar = ROUND2) -> str:
    extract = NONE_SENTINEL if output.extract is None else output.extract
    return _render(
        grammar,
        {
            THINK: output.think,
            INTENT: output.intent,
            EXTRACT: extract,
            SCORE: str(output.score),
        },
    )


def _render(grammar: Grammar, values: Dict[str, Optional[str]]) -> str:
    return ''.join(f'<{tag}>{values[tag]}</{tag}>' for tag in grammar.tags)
