"""Prompt templates for both interaction rounds and the single-prompt baselines.

Templates contain ``{query}``, ``{docs}`` and ``{doc}`` substitution sites and a
``{format}`` site filled with the response grammar's tag block. Substituted
values are inserted verbatim, without escaping.
"""
import logging
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .exceptions import InputError
from .policy.base import Message
from .tagparse import BASELINE, ROUND1, ROUND2, SINGLE_ROUND, Grammar

logger = logging.getLogger(__name__)

NO_DOCS_MARKER = '(none)'

ROUND1_SYSTEM = (
    'You are a content understanding engineer working on a user-generated content '
    'platform.'
)

ROUND1_USER = """\
Please determine the primary intent behind a user's search query, using both your \
internal knowledge and the provided context.
Your input consists of the [query] and the [in-platform documents] retrieved based on \
that query. The latter is intended to assist in judging the user's intent but may \
contain irrelevant content. The search query should be considered the primary \
reference. Please carefully analyze the given [query] and the corresponding \
[in-platform documents] to infer the underlying query intent.

Your response must strictly follow the format:
{format}
Input
    [query]: {query}
    [in-platform documents]: {docs}"""

SCORING_CRITERIA = """\
Scoring Criteria
    0 = not relevant, the document has nothing to do with the query.
    1 = partially relevant, the document is relevant to the query but partly answers it.
    2 = highly relevant, the document is dedicated to the query and contains the exact \
answer."""

EXTRACTION_GUIDELINES = """\
Extraction Guidelines
    1. Extract the content from the [document to be evaluated] that is strictly \
relevant to the query and can help answer the query. This may include paragraphs, \
sentences, or even individual phrases.
    2. The extracted content must come directly from the original document, with all \
punctuation preserved."""

ROUND2_USER = """\
Please assess the relevance of the [document to be evaluated] based on the user's \
input [query] and the inferred [intent], and extract the relevant fragment of the \
document accordingly.
""" + SCORING_CRITERIA + '\n' + EXTRACTION_GUIDELINES + """

Your response must strictly follow the format:
{format}
Input
    [document to be evaluated]: {doc}"""

ROUND2_USER_NO_EXTRACT = """\
Please assess the relevance of the [document to be evaluated] based on the user's \
input [query] and the inferred [intent].
""" + SCORING_CRITERIA + """

Your response must strictly follow the format:
{format}
Input
    [document to be evaluated]: {doc}"""

SINGLE_ROUND_USER = """\
Please determine the primary intent behind a user's search query, using both your \
internal knowledge and the provided context, then assess the relevance of the \
[document to be evaluated] based on the [query] and the inferred intent, and extract \
the relevant fragment of the document accordingly.
Your input consists of the [query], the [in-platform documents] retrieved based on \
that query, and the [document to be evaluated]. The [in-platform documents] are \
intended to assist in judging the user's intent but may contain irrelevant content. \
The search query should be considered the primary reference.
""" + SCORING_CRITERIA + '\n' + EXTRACTION_GUIDELINES + """

Your response must strictly follow the format:
{format}
Input
    [query]: {query}
    [in-platform documents]: {docs}
    [document to be evaluated]: {doc}"""

UMBRELA_SYSTEM = (
    'You are a relevance assessor working on a user-generated content platform.'
)

UMBRELA_USER = """\
Given a query and a document, you must provide a score on an integer scale of 0 to 2 \
with the following meanings:
0 = represent that the document has nothing to do with the query
1 = represents that the document has some answer for the query, but the answer may be \
a bit unclear, or hidden amongst extraneous information
2 = represents that the document is dedicated to the query and contains the exact answer

Important Instruction:
Assign category 1 if document presents something very important related to the entire \
topic but also has some extra information and category 2 if the document only and \
entirely refers to the topic. If none of the above satisfies give it category 0.
Please determine the primary intent behind a user's search query, using both your \
internal knowledge and the provided context.

Your response must strictly follow the format:
{format}
Input
    [query]: {query}
    [document to be evaluated]: {doc}"""

_PLACEHOLDER = re.compile(r'\{(query|docs|doc|format)\}')


@dataclass(frozen=True)
class PromptSet:
    """All templates used by the pipeline; override files replace single fields."""

    round1_system: str = ROUND1_SYSTEM
    round1_user: str = ROUND1_USER
    round2_user: str = ROUND2_USER
    round2_user_no_extract: str = ROUND2_USER_NO_EXTRACT
    single_round_user: str = SINGLE_ROUND_USER
    umbrela_system: str = UMBRELA_SYSTEM
    umbrela_user: str = UMBRELA_USER


DEFAULT_PROMPTS = PromptSet()


def load_prompt_set(directory: Optional[str]) -> PromptSet:
    """Locale override: ``<directory>/<field>.txt`` replaces the English template."""
    if not directory:
        return DEFAULT_PROMPTS

    overrides: Dict[str, str] = {}
    for field in fields(PromptSet):
        path = Path(directory) / f'{field.name}.txt'
        if path.exists():
            overrides[field.name] = path.read_text(encoding='utf-8')
            logger.info('Prompt template %s overridden from %s', field.name, path)
    return replace(DEFAULT_PROMPTS, **overrides)


def substitute(template: str, **values: str) -> str:
    """Single-pass substitution: inserted values are never re-scanned."""

    def _sub(match):
        key = match.group(1)
        return values[key] if key in values else match.group(0)

    return _PLACEHOLDER.sub(_sub, template)


def format_docs(aux_docs: Sequence[str]) -> str:
    if not aux_docs:
        return NO_DOCS_MARKER
    return '\n'.join(f'{i}. {doc}' for i, doc in enumerate(aux_docs, start=1))


def render_round1_prompt(
    query: str,
    aux_docs: Sequence[str],
    grammar: Grammar = ROUND1,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> List[Message]:
    if not query.strip():
        raise InputError('query must be non-empty')
    user = substitute(
        prompts.round1_user,
        query=query,
        docs=format_docs(aux_docs),
        format=grammar.format_block(),
    )
    return [Message('system', prompts.round1_system), Message('user', user)]


def render_round2_messages(
    prior: Sequence[Message],
    candidate: str,
    grammar: Grammar = ROUND2,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> List[Message]:
    if not prior or prior[-1].role != 'assistant':
        raise InputError('round-2 rendering needs the round-1 assistant reply last')
    if 'extract' in grammar:
        template = prompts.round2_user
    else:
        template = prompts.round2_user_no_extract
    user = substitute(template, doc=candidate, format=grammar.format_block())
    return [*prior, Message('user', user)]


def render_single_round_prompt(
    query: str,
    aux_docs: Sequence[str],
    candidate: str,
    grammar: Grammar = SINGLE_ROUND,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> List[Message]:
    if not query.strip():
        raise InputError('query must be non-empty')
    user = substitute(
        prompts.single_round_user,
        query=query,
        docs=format_docs(aux_docs),
        doc=candidate,
        format=grammar.format_block(),
    )
    return [Message('system', prompts.round1_system), Message('user', user)]


def render_umbrela_prompt(
    query: str, candidate: str, prompts: PromptSet = DEFAULT_PROMPTS
) -> List[Message]:
    user = substitute(
        prompts.umbrela_user, query=query, doc=candidate, format=BASELINE.format_block()
    )
    return [Message('system', prompts.umbrela_system), Message('user', user)]
