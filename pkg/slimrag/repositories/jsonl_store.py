import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Union

from pydantic import ValidationError

from ..exceptions import DatasetError
from ..models import Document, HeuristicAnswer, Question, QuestionResult

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def iter_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    source = Path(path)
    if not source.is_file():
        raise DatasetError(f"File not found: {source}")
    with source.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{source}:{line_no}: invalid JSON ({e.msg})")


def load_dataset(path: PathLike) -> List[Question]:
    """Read {"id","question","short_answers","long_answer"} lines"""
    questions: List[Question] = []
    seen = set()
    for record in iter_jsonl(path):
        try:
            question = Question(
                id=str(record["id"]),
                text=record["question"],
                gold_short_answers=record.get("short_answers") or [],
                gold_long_answer=record.get("long_answer"),
            )
        except (KeyError, ValidationError) as e:
            raise DatasetError(f"{path}: bad dataset record {record.get('id')!r}: {e}")
        if question.id in seen:
            raise DatasetError(f"{path}: duplicate question id {question.id}")
        seen.add(question.id)
        questions.append(question)
    logger.info(f"Loaded {len(questions)} questions from {path}")
    return questions


def iter_corpus(path: PathLike) -> Iterator[Document]:
    """Stream {"doc_id","title","text"} lines as documents"""
    for record in iter_jsonl(path):
        try:
            yield Document.model_validate(record)
        except ValidationError as e:
            raise DatasetError(f"{path}: bad corpus record {record.get('doc_id')!r}: {e}")


def load_heuristic_answers(path: PathLike) -> Dict[str, HeuristicAnswer]:
    answers: Dict[str, HeuristicAnswer] = {}
    for record in iter_jsonl(path):
        try:
            answer = HeuristicAnswer.model_validate(record)
        except ValidationError as e:
            raise DatasetError(f"{path}: bad heuristic answer record: {e}")
        answers[answer.question_id] = answer
    return answers


def load_results(path: PathLike) -> List[QuestionResult]:
    try:
        return [QuestionResult.model_validate(record) for record in iter_jsonl(path)]
    except ValidationError as e:
        raise DatasetError(f"{path}: bad result record: {e}")


def load_scores(path: PathLike) -> Dict[str, float]:
    """Read per-question {"id","em"} lines"""
    scores: Dict[str, float] = {}
    for record in iter_jsonl(path):
        try:
            scores[str(record["id"])] = float(record["em"])
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{path}: bad score record {record!r}: {e}")
    return scores


class JsonlWriter:
    """Appends one JSON object per line; each line is written and flushed whole"""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8")
        self.count = 0

    def write(self, record: Dict[str, Any]) -> None:
        self._handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._handle.flush()
        os.fsync(self._handle.fileno())
        self.count += 1

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    with JsonlWriter(path) as writer:
        for record in records:
            writer.write(record)
        return writer.count
