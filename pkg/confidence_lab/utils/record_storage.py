"""
Line-delimited record storage
Handles local file operations for manifests, decoded/labeled record streams and reports.
Every stream starts with a header line naming its format and version; each following
line is one self-describing JSON record. Writes go to a temp file that is renamed on
success, so a failed stage never leaves a partial output behind.
"""

import contextlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from ..core.exceptions import RecordFormatError

logger = logging.getLogger(__name__)

STREAM_VERSION = 1
RecordT = TypeVar("RecordT", bound=BaseModel)


@contextlib.contextmanager
def atomic_write(path: Union[str, Path], binary: bool = False) -> Iterator[IO]:
    """Write to a sibling temp file and rename it over path only on success"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        mode = "wb" if binary else "w"
        kwargs = {} if binary else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp_name, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_name)
        raise


def stream_header(kind: str) -> str:
    return json.dumps({"format": kind, "version": STREAM_VERSION}, sort_keys=True)


def write_records(path: Union[str, Path], kind: str, records: Iterable[BaseModel]) -> int:
    """Write a header line plus one JSON record per line; returns the record count"""
    count = 0
    with atomic_write(path) as handle:
        handle.write(stream_header(kind) + "\n")
        for record in records:
            handle.write(record.model_dump_json() + "\n")
            count += 1
    logger.info(f"📝 Wrote {count} {kind} record(s) to {path}")
    return count


def _read_text(path: Path) -> str:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise RecordFormatError(str(path), None, f"cannot read file: {e}") from e
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line_number = raw.count(b"\n", 0, e.start) + 1
        raise RecordFormatError(str(path), line_number, f"invalid UTF-8 at byte {e.start}") from e


def read_records(path: Union[str, Path], kind: str, record_type: Type[RecordT]) -> List[RecordT]:
    """Parse a record stream; any malformed line raises RecordFormatError with its line number"""
    path = Path(path)
    text = _read_text(path)
    if text == "":
        return []
    if not text.endswith("\n"):
        last_line = text.count("\n") + 1
        raise RecordFormatError(str(path), last_line, "truncated record (missing line terminator)")

    lines = text.split("\n")[:-1]
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise RecordFormatError(str(path), 1, f"unreadable header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != kind:
        raise RecordFormatError(str(path), 1, f"expected a '{kind}' stream, found header {lines[0][:80]!r}")
    if header.get("version") != STREAM_VERSION:
        raise RecordFormatError(str(path), 1, f"unsupported {kind} version {header.get('version')}")

    records: List[RecordT] = []
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            records.append(record_type.model_validate_json(line))
        except ValidationError as e:
            first = e.errors()[0] if e.errors() else {"msg": str(e)}
            raise RecordFormatError(str(path), line_number, f"malformed record: {first.get('msg')}") from e
    logger.info(f"📖 Read {len(records)} {kind} record(s) from {path}")
    return records


def write_json_document(path: Union[str, Path], document: dict) -> None:
    with atomic_write(path) as handle:
        handle.write(json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_json_document(path: Union[str, Path]) -> dict:
    path = Path(path)
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise RecordFormatError(str(path), e.lineno, f"invalid JSON: {e.msg}") from e
