"""On-disk formats: feature files, JSON Lines sidecars, journals, reports.

Everything is versioned and language-neutral.  Feature matrices use a small
binary container; labels, predictions, and the annotation journal are JSON
Lines (diff-able, append-able).  Unknown JSON fields are ignored on read.
All writers go through an atomic write-temp-then-rename.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .annotation import (
    AnnotationRun,
    AnnotationSet,
    ConsensusPolicy,
    CorrectionQueue,
    apply_correction,
    detect_consensus,
)
from .domain import HclRecord

FEATURE_MAGIC = b"HCLF"
FEATURE_VERSION = 1
JOURNAL_VERSION = 1


class FormatError(ValueError):
    pass


class JournalError(FormatError):
    pass


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    for row in rows:
        buf.write(json.dumps(row, sort_keys=True))
        buf.write("\n")
    atomic_write_text(path, buf.getvalue())


def read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{i + 1}: bad JSON line: {e}") from e
    return rows


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def write_features(path: Path, ids: list[str], X: np.ndarray) -> None:
    """Binary container: magic, version, n, d (little-endian u32), float32
    rows, then n null-terminated utf-8 ids."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != len(ids):
        raise FormatError(f"feature matrix {X.shape} does not match {len(ids)} ids")
    buf = io.BytesIO()
    buf.write(FEATURE_MAGIC)
    buf.write(struct.pack("<III", FEATURE_VERSION, X.shape[0], X.shape[1]))
    buf.write(np.ascontiguousarray(X, dtype="<f4").tobytes())
    for sid in ids:
        encoded = str(sid).encode("utf-8")
        if b"\x00" in encoded:
            raise FormatError(f"sample id {sid!r} contains a null byte")
        buf.write(encoded)
        buf.write(b"\x00")
    atomic_write_bytes(path, buf.getvalue())


def _read_features_binary(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature-file version {version}")
    off = 16
    need = n * d * 4
    if len(data) < off + need:
        raise FormatError(f"{path}: truncated feature block")
    X = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    ids = []
    pos = off + need
    for _ in range(n):
        end = data.index(b"\x00", pos)
        ids.append(data[pos:end].decode("utf-8"))
        pos = end + 1
    # feature files may be 32-bit; training is 64-bit, so widen on load
    return ids, X.astype(np.float64)


def _read_features_csv(path: Path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise FormatError(f"{path}: CSV feature file needs an 'id,f0,...' header")
        width = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise FormatError(f"{path}:{lineno}: expected {width + 1} columns")
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if not ids:
        raise FormatError(f"{path}: no feature rows")
    return ids, np.asarray(rows, dtype=np.float64)


def read_features(path: Path) -> tuple[list[str], np.ndarray]:
    """Read either the binary container or the CSV fallback."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
    if head == FEATURE_MAGIC:
        return _read_features_binary(path)
    return _read_features_csv(path)


# ---------------------------------------------------------------------------
# label / prediction sidecars
# ---------------------------------------------------------------------------


def write_labels(path: Path, labels: dict[str, int]) -> None:
    write_jsonl(path, [{"id": sid, "label": int(lab)} for sid, lab in labels.items()])


def read_labels(path: Path) -> dict[str, int]:
    out = {}
    for row in read_jsonl(path):
        if "id" not in row or "label" not in row:
            raise FormatError(f"{path}: label rows need 'id' and 'label'")
        out[str(row["id"])] = int(row["label"])
    return out


def write_predictions(path: Path, annotations: AnnotationSet) -> None:
    rows = []
    for sid, per in annotations.predictions.items():
        for annotator in annotations.annotator_ids:
            rows.append({"id": sid, "annotator": annotator, "label": int(per[annotator])})
    write_jsonl(path, rows)


def read_predictions(paths: list[Path], annotator_ids: list[str] | None = None) -> AnnotationSet:
    """Merge one or more prediction files into an annotation set.

    Annotator order follows ``annotator_ids`` when given, else first
    appearance across the files.
    """
    seen_order: list[str] = []
    predictions: dict[str, dict[str, int]] = {}
    for path in paths:
        if not Path(path).exists():
            raise FileNotFoundError(f"prediction file not found: {path}")
        for row in read_jsonl(Path(path)):
            for field in ("id", "annotator", "label"):
                if field not in row:
                    raise FormatError(f"{path}: prediction rows need 'id', 'annotator', 'label'")
            sid, annotator = str(row["id"]), str(row["annotator"])
            if annotator not in seen_order:
                seen_order.append(annotator)
            predictions.setdefault(sid, {})[annotator] = int(row["label"])
    return AnnotationSet(annotator_ids=annotator_ids or seen_order, predictions=predictions)


def write_class_names(path: Path, names: list[str]) -> None:
    write_json(path, list(names))


def read_class_names(path: Path) -> list[str]:
    names = read_json(path)
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise FormatError(f"{path}: class file must be a JSON array of names")
    return names


# ---------------------------------------------------------------------------
# annotation journal
# ---------------------------------------------------------------------------


def journal_events(
    run: AnnotationRun,
    class_names: list[str],
    metas: dict[str, dict] | None = None,
) -> list[dict]:
    """Serialize a run (complete or partial) as an append-only event list."""
    header = {
        "event": "header",
        "version": JOURNAL_VERSION,
        "policy": run.policy.mode,
        "annotators": list(run.annotator_ids),
        "k": run.k,
        "class_names": list(class_names),
        "n": run.n,
    }
    events = [header]
    for sid in run.order:
        rec = run.records.get(sid)
        ev = {"event": "sample", "id": sid, "predictions": dict(run.predictions[sid])}
        if rec is not None and rec.s == 0:
            ev["s"] = 0
            ev["label"] = rec.label
        else:
            ev["s"] = 1
        if metas and metas.get(sid):
            ev["meta"] = dict(metas[sid])
        events.append(ev)
    for sid in run.order:
        rec = run.records.get(sid)
        if rec is not None and rec.s == 1:
            events.append(
                {"event": "correction", "id": sid, "label": rec.label, "provenance": rec.provenance}
            )
    return events


def write_journal(
    path: Path,
    run: AnnotationRun,
    class_names: list[str],
    metas: dict[str, dict] | None = None,
) -> None:
    write_jsonl(path, journal_events(run, class_names, metas))


def correction_event(sample_id: str, label: int, provenance: str, ts: str | None = None) -> dict:
    ev = {"event": "correction", "id": sample_id, "label": int(label), "provenance": provenance}
    if ts is not None:
        ev["ts"] = ts
    return ev


def repair_torn_tail(path: Path) -> bool:
    """Truncate an unterminated trailing record (crash mid-append).

    A record is acknowledged only after its full line including the newline
    is written and fsynced, so an unterminated tail was never acknowledged
    and discarding it is safe.  Returns True when a repair happened.
    Must run before appending to a journal that may have seen a crash,
    otherwise the next append would merge into the torn record.
    """
    data = Path(path).read_bytes()
    if not data or data.endswith(b"\n"):
        return False
    cut = data.rfind(b"\n") + 1
    with open(path, "r+b") as f:
        f.truncate(cut)
        f.flush()
        os.fsync(f.fileno())
    return True


def replay_journal(
    path: Path, *, tolerate_torn_tail: bool = False
) -> tuple[AnnotationRun, CorrectionQueue, list[str], dict[str, dict]]:
    """Rebuild (run, queue, class_names, metas) from a journal.

    ``tolerate_torn_tail`` skips a final line that fails to parse — the
    signature of a crash mid-append.  A malformed line anywhere else is
    corruption and raises.
    """
    raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    events = []
    for i, line in enumerate(raw_lines):
        line = line.strip()
        if not line:
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as e:
            if tolerate_torn_tail and i == len(raw_lines) - 1:
                break
            raise JournalError(f"{path}:{i + 1}: bad journal line: {e}") from e
    if not events or events[0].get("event") != "header":
        raise JournalError(f"{path}: journal must start with a header event")
    header = events[0]
    if header.get("version") != JOURNAL_VERSION:
        raise JournalError(f"{path}: unsupported journal version {header.get('version')}")
    policy = ConsensusPolicy(header["policy"])
    annotators = [str(a) for a in header["annotators"]]
    k = int(header["k"])
    class_names = [str(n) for n in header.get("class_names", [])]

    run = AnnotationRun(policy=policy, annotator_ids=annotators, k=k, order=[], predictions={})
    queue = CorrectionQueue()
    metas: dict[str, dict] = {}
    corrections: list[dict] = []
    for ev in events[1:]:
        kind = ev.get("event")
        if kind == "sample":
            sid = str(ev["id"])
            if sid in run.predictions:
                raise JournalError(f"{path}: duplicate sample event for {sid!r}")
            preds = {str(a): int(v) for a, v in ev["predictions"].items()}
            run.order.append(sid)
            run.predictions[sid] = preds
            s, label = detect_consensus([preds[a] for a in annotators], policy)
            if int(ev["s"]) != s:
                raise JournalError(f"{path}: sample {sid!r} flag disagrees with predictions")
            if s == 0:
                if "label" in ev and int(ev["label"]) != label:
                    raise JournalError(f"{path}: sample {sid!r} consensus label mismatch")
                run.records[sid] = HclRecord(sid, int(label), 0, "consensus")
            else:
                queue.enqueue(sid)
            if ev.get("meta"):
                metas[sid] = dict(ev["meta"])
        elif kind == "correction":
            corrections.append(ev)
        elif kind == "header":
            raise JournalError(f"{path}: duplicate header event")
        # unknown event kinds are ignored for forward compatibility
    for ev in corrections:
        apply_correction(
            run, queue, str(ev["id"]), int(ev["label"]), str(ev.get("provenance", "human"))
        )
    expected_n = int(header.get("n", len(run.order)))
    if len(run.order) != expected_n:
        raise JournalError(
            f"{path}: header says {expected_n} samples, journal has {len(run.order)}"
        )
    return run, queue, class_names, metas


def write_corrections_export(path: Path, rows: list[dict]) -> None:
    write_jsonl(path, rows)


def read_corrections(path: Path) -> list[dict]:
    rows = []
    for row in read_jsonl(Path(path)):
        if "sample_id" not in row or "label" not in row:
            raise FormatError(f"{path}: correction rows need 'sample_id' and 'label'")
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def format_table(headers: list[str], rows: list[list]) -> str:
    """Aligned plain-text table for humans; values rendered with str()."""
    cells = [[str(h) for h in headers]] + [[str(v) for v in row] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_curve_csv(path: Path, report_epochs: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "objective", "train_accuracy", "test_accuracy", "wall_time_s"])
    for e in report_epochs:
        writer.writerow(
            [
                e["epoch"],
                repr(e["objective"]),
                repr(e["train_accuracy"]),
                "" if e["test_accuracy"] is None else repr(e["test_accuracy"]),
                repr(e["wall_time_s"]),
            ]
        )
    atomic_write_text(path, buf.getvalue())
