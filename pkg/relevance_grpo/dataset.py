"""Dataset construction from answer-generation logs.

A retrieved document cited by at least ``citation_threshold`` of
``forwards_required`` generator passes becomes a positive; one cited less
often becomes a hard negative. Random negatives are drawn from a document pool
disjoint from every logged document. Provisional labels are 2/1/0 for
positive/hard negative/random negative; human labels always override them.
"""
import csv
import enum
import hashlib
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import cohen_kappa_score

from .exceptions import DataError, InputError, ShortfallError
from .jsonl import atomic_open, dumps, read_jsonl
from .prompts import DEFAULT_PROMPTS, PromptSet, render_umbrela_prompt
from .rollout import QueryDocPair
from .tagparse import BASELINE, ParseFailure, parse_tagged

logger = logging.getLogger(__name__)

LABELS = (0, 1, 2)
DEFAULT_TRAIN_SIZE = 5000
DEFAULT_MAX_AUX_DOCS = 5
PROBABILITY_TOLERANCE = 1e-3
EXPORT_MODES = ('coldstart', 'rl', 'distill')


class LabelSource(str, enum.Enum):
    CITATION_POSITIVE = 'citation_positive'
    CITATION_HARD_NEGATIVE = 'citation_hard_negative'
    RANDOM_NEGATIVE = 'random_negative'
    HUMAN = 'human'


PROVISIONAL_LABELS = {
    LabelSource.CITATION_POSITIVE: 2,
    LabelSource.CITATION_HARD_NEGATIVE: 1,
    LabelSource.RANDOM_NEGATIVE: 0,
}


@dataclass(frozen=True)
class GenerationLogEntry:
    query: str
    doc_id: str
    doc_text: str
    forwards: int
    citation_count: int

    def __post_init__(self):
        if self.forwards < 0 or self.citation_count < 0:
            raise DataError(f'{self.doc_id}: negative counts')
        if self.citation_count > self.forwards:
            raise DataError(
                f'{self.doc_id}: cited {self.citation_count} times '
                f'in {self.forwards} generations'
            )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'GenerationLogEntry':
        try:
            return cls(
                query=data['query'],
                doc_id=str(data['doc_id']),
                doc_text=data['doc_text'],
                forwards=int(data['forwards']),
                citation_count=int(data['citation_count']),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f'Malformed generation log record: {e!r}') from e


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    text: str


@dataclass(frozen=True)
class LabeledPair(QueryDocPair):
    label_source: LabelSource = LabelSource.HUMAN
    doc_id: str = ''

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data['label_source'] = self.label_source.value
        data['doc_id'] = self.doc_id
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LabeledPair':
        pair = QueryDocPair.from_dict(data)
        try:
            source = LabelSource(data.get('label_source', LabelSource.HUMAN.value))
        except ValueError as e:
            raise DataError(f'Pair {pair.id}: {e}') from e
        doc_id = str(data.get('doc_id', ''))
        return cls(**vars(pair), label_source=source, doc_id=doc_id)


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    annotator_id: str
    label: int

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f'{self.pair_id}: annotation label must be 0, 1 or 2')


def pair_id(query: str, doc_id: str) -> str:
    digest = hashlib.blake2b(query.encode('utf-8'), digest_size=6).hexdigest()
    return f'{digest}-{doc_id}'


@dataclass
class CitationPartition:
    positives: List[LabeledPair] = field(default_factory=list)
    hard_negatives: List[LabeledPair] = field(default_factory=list)
    #: entries logged with a different number of generator passes
    rejected: List[GenerationLogEntry] = field(default_factory=list)


def label_by_citation(
    entries: Iterable[GenerationLogEntry],
    forwards_required: int,
    citation_threshold: int,
    max_aux_docs: int = DEFAULT_MAX_AUX_DOCS,
) -> CitationPartition:
    """Split log entries into citation positives and hard negatives.

    The auxiliary documents of a pair are the other documents logged for the
    same query, in log order.
    """
    if not forwards_required >= citation_threshold >= 1:
        raise InputError(
            'forwards_required >= citation_threshold >= 1 is required, got '
            f'{forwards_required} and {citation_threshold}'
        )

    partition = CitationPartition()
    by_query: Dict[str, List[GenerationLogEntry]] = defaultdict(list)
    for entry in entries:
        if entry.citation_count > entry.forwards:
            raise DataError(f'{entry.doc_id}: citation_count exceeds forwards')
        if entry.forwards != forwards_required:
            partition.rejected.append(entry)
            continue
        by_query[entry.query].append(entry)

    if partition.rejected:
        logger.warning(
            'Rejected %d entries not generated with %d forwards',
            len(partition.rejected),
            forwards_required,
        )

    for query, query_entries in by_query.items():
        for entry in query_entries:
            aux_docs = tuple(
                e.doc_text for e in query_entries if e.doc_id != entry.doc_id
            )[:max_aux_docs]
            positive = entry.citation_count >= citation_threshold
            source = (
                LabelSource.CITATION_POSITIVE
                if positive
                else LabelSource.CITATION_HARD_NEGATIVE
            )
            pair = LabeledPair(
                id=pair_id(query, entry.doc_id),
                query=query,
                aux_docs=aux_docs,
                candidate=entry.doc_text,
                gold=PROVISIONAL_LABELS[source],
                label_source=source,
                doc_id=entry.doc_id,
            )
            (partition.positives if positive else partition.hard_negatives).append(pair)

    logger.info(
        'Citation labeling: %d positives, %d hard negatives',
        len(partition.positives),
        len(partition.hard_negatives),
    )
    return partition


def mine_random_negatives(
    pairs: Sequence[LabeledPair],
    corpus: Sequence[CorpusDocument],
    count: int,
    rng: np.random.Generator,
) -> List[LabeledPair]:
    """Pair queries round-robin with corpus documents never logged for any query."""
    if count <= 0:
        return []
    logged = {p.doc_id for p in pairs}
    pool = sorted((d for d in corpus if d.doc_id not in logged), key=lambda d: d.doc_id)
    queries: Dict[str, Tuple[str, ...]] = {}
    for p in sorted(pairs, key=lambda p: p.id):
        queries.setdefault(p.query, p.aux_docs)
    if not pool or not queries:
        raise ShortfallError({PROVISIONAL_LABELS[LabelSource.RANDOM_NEGATIVE]: count})

    query_list = sorted(queries)
    used = set()
    negatives = []
    for n in range(count):
        query = query_list[n % len(query_list)]
        doc = _draw_unused(pool, query, used, rng)
        if doc is None:
            break
        used.add((query, doc.doc_id))
        negatives.append(
            LabeledPair(
                id=pair_id(query, doc.doc_id),
                query=query,
                aux_docs=queries[query],
                candidate=doc.text,
                gold=PROVISIONAL_LABELS[LabelSource.RANDOM_NEGATIVE],
                label_source=LabelSource.RANDOM_NEGATIVE,
                doc_id=doc.doc_id,
            )
        )
    if len(negatives) < count:
        logger.warning(
            'Only %d of %d random negatives available', len(negatives), count
        )
    return negatives


def _draw_unused(
    pool: Sequence[CorpusDocument],
    query: str,
    used: set,
    rng: np.random.Generator,
    attempts: int = 32,
) -> Optional[CorpusDocument]:
    for _ in range(attempts):
        doc = pool[int(rng.integers(0, len(pool)))]
        if (query, doc.doc_id) not in used:
            return doc
    available = [d for d in pool if (query, d.doc_id) not in used]
    if not available:
        return None
    return available[int(rng.integers(0, len(available)))]


def balanced_targets(train_size: int) -> Dict[int, int]:
    """Per-class train counts differing by at most one.

    Lower labels get the remainder.
    """
    base, extra = divmod(train_size, len(LABELS))
    return {label: base + (1 if i < extra else 0) for i, label in enumerate(LABELS)}


def assemble_dataset(
    positives: Sequence[LabeledPair],
    hard_negatives: Sequence[LabeledPair],
    corpus: Sequence[CorpusDocument],
    random_negative_count: int,
    balance: bool = True,
    train_size: int = DEFAULT_TRAIN_SIZE,
    seed: int = 0,
) -> Tuple[List[LabeledPair], List[LabeledPair]]:
    """Return ``(train, eval)``; everything not drawn into train goes to eval."""
    if train_size < 0:
        raise InputError('train_size must be >= 0')

    rng = np.random.default_rng(seed)
    negatives = mine_random_negatives(
        [*positives, *hard_negatives], corpus, random_negative_count, rng
    )

    pools: Dict[int, List[LabeledPair]] = {label: [] for label in LABELS}
    for pair in (*positives, *hard_negatives, *negatives):
        pools[pair.gold].append(pair)  # type: ignore
    for label in LABELS:
        pools[label].sort(key=lambda p: p.id)

    if balance:
        targets = balanced_targets(train_size)
        deficits = {
            label: targets[label] - len(pools[label])
            for label in LABELS
            if len(pools[label]) < targets[label]
        }
        if deficits:
            raise ShortfallError(deficits)
        train: List[LabeledPair] = []
        held_out: List[LabeledPair] = []
        for label in LABELS:
            order = rng.permutation(len(pools[label]))
            shuffled = [pools[label][i] for i in order]
            train.extend(shuffled[: targets[label]])
            held_out.extend(shuffled[targets[label] :])
        order = rng.permutation(len(train))
        train = [train[i] for i in order]
    else:
        everything = [p for label in LABELS for p in pools[label]]
        if len(everything) < train_size:
            raise InputError(
                f'train_size {train_size} exceeds the {len(everything)} available pairs'
            )
        order = rng.permutation(len(everything))
        shuffled = [everything[i] for i in order]
        train, held_out = shuffled[:train_size], shuffled[train_size:]

    logger.info(
        'Assembled %d train / %d eval pairs (train classes %s)',
        len(train),
        len(held_out),
        dict(sorted(Counter(p.gold for p in train).items())),
    )
    return train, held_out


@dataclass
class AgreementReport:
    raw_agreement: float
    #: chance correction from labels pooled over both annotators
    kappa: float
    #: chance correction from each annotator's own marginals
    cohen_kappa: float
    pair_count: int
    gate: Optional[float]
    gate_passed: bool
    disagreeing: List[str]
    #: labels of pairs both annotators agree on
    gold: Dict[str, int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'raw_agreement': self.raw_agreement,
            'kappa': self.kappa,
            'cohen_kappa': self.cohen_kappa,
            'pair_count': self.pair_count,
            'gate': self.gate,
            'gate_passed': self.gate_passed,
            'disagreeing': self.disagreeing,
        }


def annotator_agreement(
    records: Iterable[AnnotationRecord], gate: Optional[float] = None
) -> AgreementReport:
    """Agreement statistics of a double-annotated batch.

    ``kappa = (p_o - p_e) / (1 - p_e)`` where ``p_e`` sums the squared label
    frequencies over both annotators' labels. When ``gate`` is set and the raw
    agreement falls below it, disagreeing pairs are flagged for exclusion.
    """
    by_pair: Dict[str, List[AnnotationRecord]] = defaultdict(list)
    for record in records:
        by_pair[record.pair_id].append(record)
    if not by_pair:
        raise InputError('No annotation records')

    first: List[int] = []
    second: List[int] = []
    pair_ids = sorted(by_pair)
    for pid in pair_ids:
        annotations = sorted(by_pair[pid], key=lambda r: r.annotator_id)
        annotators = {r.annotator_id for r in annotations}
        if len(annotations) != 2 or len(annotators) != 2:
            raise InputError(
                f'Pair {pid} has {len(annotations)} annotations, exactly 2 '
                'distinct annotators are required'
            )
        first.append(annotations[0].label)
        second.append(annotations[1].label)

    a = np.asarray(first)
    b = np.asarray(second)
    agree = a == b
    p_o = float(np.mean(agree))

    pooled = np.concatenate([a, b])
    p_e = float(sum(np.mean(pooled == label) ** 2 for label in LABELS))
    if p_e < 1:
        kappa = (p_o - p_e) / (1 - p_e)
    else:
        logger.warning('Every annotation carries the same label, kappa is undefined')
        kappa = 0.0

    if len(set(first) | set(second)) > 1:
        cohen = float(cohen_kappa_score(a, b, labels=list(LABELS)))
    else:
        cohen = 0.0

    disagreeing = [pid for pid, ok in zip(pair_ids, agree) if not ok]
    gate_passed = gate is None or p_o >= gate
    if not gate_passed:
        logger.warning(
            'Raw agreement %.3f below gate %.3f: %d disagreeing pairs excluded',
            p_o,
            gate,
            len(disagreeing),
        )

    return AgreementReport(
        raw_agreement=p_o,
        kappa=kappa,
        cohen_kappa=cohen,
        pair_count=len(pair_ids),
        gate=gate,
        gate_passed=gate_passed,
        disagreeing=disagreeing,
        gold={pid: int(label) for pid, label, ok in zip(pair_ids, a, agree) if ok},
    )


def apply_human_labels(
    pairs: Iterable[LabeledPair], gold: Mapping[str, int]
) -> List[LabeledPair]:
    """Replace provisional labels by agreed human labels where available."""
    result = []
    for pair in pairs:
        if pair.id in gold:
            pair = replace(pair, gold=gold[pair.id], label_source=LabelSource.HUMAN)
        result.append(pair)
    return result


def read_generation_log(path) -> List[GenerationLogEntry]:
    return [GenerationLogEntry.from_dict(record) for record in read_jsonl(path)]


def read_corpus(path) -> List[CorpusDocument]:
    try:
        return [
            CorpusDocument(doc_id=str(r['doc_id']), text=r['doc_text'])
            for r in read_jsonl(path)
        ]
    except KeyError as e:
        raise DataError(f'{path}: corpus record is missing {e}') from e


def read_annotations(path) -> List[AnnotationRecord]:
    records = []
    seen = set()
    try:
        with open(path, encoding='utf-8', newline='') as f:
            for row in csv.DictReader(f):
                record = AnnotationRecord(
                    pair_id=row['pair_id'],
                    annotator_id=row['annotator_id'],
                    label=int(row['label']),
                )
                key = (record.pair_id, record.annotator_id)
                if key in seen:
                    raise DataError(f'Duplicate annotation {key} in {path}')
                seen.add(key)
                records.append(record)
    except OSError as e:
        raise DataError(f'Cannot read annotations {path}: {e}') from e
    except (KeyError, ValueError) as e:
        raise DataError(f'Malformed annotation row in {path}: {e!r}') from e
    return records


@dataclass
class ExportSummary:
    mode: str
    written: int = 0
    skipped: int = 0


def _rl_record(record: Mapping[str, Any], prompts: PromptSet) -> Dict[str, Any]:
    pair = QueryDocPair.from_dict(dict(record))
    if pair.gold is None:
        raise DataError(f'Pair {pair.id}: gold label is required')
    return pair.to_dict()


def _coldstart_record(record: Mapping[str, Any], prompts: PromptSet) -> Dict[str, Any]:
    teacher = record.get('teacher_response')
    if not teacher or not str(teacher).strip():
        raise DataError('teacher_response is missing')
    parsed = parse_tagged(teacher, BASELINE)
    if isinstance(parsed, ParseFailure):
        raise DataError(f'teacher_response does not follow the answer format: {parsed}')
    try:
        messages = render_umbrela_prompt(record['query'], record['candidate'], prompts)
    except KeyError as e:
        raise DataError(f'{e.args[0]} is missing') from e
    return {
        'id': record.get('id'),
        'messages': [m.to_dict() for m in messages]
        + [{'role': 'assistant', 'content': teacher}],
        'gold': record.get('gold'),
    }


def _distill_record(record: Mapping[str, Any], prompts: PromptSet) -> Dict[str, Any]:
    try:
        query, doc, probs = record['query'], record['candidate'], record['score_probs']
    except KeyError as e:
        raise DataError(f'{e.args[0]} is missing') from e
    try:
        p = np.asarray(probs, dtype=float)
    except (TypeError, ValueError) as e:
        raise DataError(f'score_probs is not numeric: {e}') from e
    if p.shape != (3,) or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DataError('score_probs must be 3 non-negative numbers')
    if abs(float(p.sum()) - 1.0) > PROBABILITY_TOLERANCE:
        raise DataError(f'score_probs sum to {p.sum():.6f}')
    return {
        'id': record.get('id'),
        'query': query,
        'doc': doc,
        'score_probs': (p / p.sum()).tolist(),
    }


_EXPORTERS = {
    'rl': _rl_record,
    'coldstart': _coldstart_record,
    'distill': _distill_record,
}


def export_training_files(
    records: Iterable[Mapping[str, Any]],
    mode: str,
    output_path,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> ExportSummary:
    """Write mode-specific JSONL.

    Records missing required fields are skipped and counted.

    * ``rl``        - a query-document pair with gold label
    * ``coldstart`` - single-prompt messages plus the teacher completion
      (``teacher_response``) as the assistant turn
    * ``distill``   - ``{query, doc, score_probs}``, probabilities renormalised
    """
    if mode not in _EXPORTERS:
        raise InputError(
            f'Unknown export mode `{mode}`, expected one of {EXPORT_MODES}'
        )
    exporter = _EXPORTERS[mode]
    summary = ExportSummary(mode)

    with atomic_open(output_path) as f:
        for i, record in enumerate(records):
            try:
                line = exporter(record, prompts)
            except (DataError, InputError) as e:
                summary.skipped += 1
                logger.warning(
                    'Skipping %s record %d (%s): %s', mode, i, record.get('id'), e
                )
                continue
            f.write(dumps(line))
            f.write('\n')
            summary.written += 1

    logger.info(
        'Exported %d %s records to %s (%d skipped)',
        summary.written,
        mode,
        output_path,
        summary.skipped,
    )
    return summary
