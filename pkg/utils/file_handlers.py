"""Dataset and report file handling.

Dataset files are tab-separated with a header row and the columns
``index  image1  image2  text  label``. An image field is ``"h w c <hex>"``:
the height, width and channel count followed by the row-major pixel bytes
(``round(255 * value)`` as uint8) in base 16. An absent image is ``-``.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd  # type: ignore
from loguru import logger
from pydantic import BaseModel, ConfigDict

from core.errors import ContractError, FormatError
from models.schemas import EvalReport
from pipeline.images import RawImage
from pipeline.synthetic import SyntheticExample

DATASET_COLUMNS = ["index", "image1", "image2", "text", "label"]
NO_IMAGE = "-"


class DatasetRecord(BaseModel):
    """One row of a dataset file."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    index: int
    images: Tuple[RawImage, ...] = ()
    text: str = ""
    label: int = -1


def encode_image(img: RawImage) -> str:
    h, w, c = img.pixels.shape
    raw = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    return f"{h} {w} {c} {raw.tobytes().hex()}"


def decode_image(field: str) -> RawImage:
    parts = field.split(" ")
    if len(parts) != 4:
        raise FormatError(f"image field needs 'h w c <hex>', got {len(parts)} parts")
    try:
        h, w, c = (int(p) for p in parts[:3])
        raw = bytes.fromhex(parts[3])
    except ValueError as e:
        raise FormatError(f"malformed image field: {e}") from e
    if len(raw) != h * w * c:
        raise FormatError(f"image field holds {len(raw)} bytes, header says {h}x{w}x{c}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c).astype(np.float32) / 255.0
    return RawImage(pixels=pixels)


def write_dataset(path: Path, examples: Sequence[SyntheticExample]) -> Path:
    """Write examples in the dataset format; texts may not contain tabs or newlines."""
    rows: List[Dict[str, Any]] = []
    for e in examples:
        if any(ch in e.text for ch in "\t\r\n"):
            raise ContractError(f"example {e.index}: text contains a tab or newline")
        if len(e.images) > 2:
            raise ContractError(f"example {e.index}: at most two images fit a dataset row")
        images = [encode_image(img) for img in e.images] + [NO_IMAGE] * (2 - len(e.images))
        rows.append({"index": e.index, "image1": images[0], "image2": images[1], "text": e.text, "label": e.label})

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=DATASET_COLUMNS)
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n")
    logger.info(f"Wrote {len(rows)} records to {path}")
    return path


def read_dataset(path: Path) -> List[DatasetRecord]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"dataset file is empty: {path}") from e
    except pd.errors.ParserError as e:
        raise FormatError(f"dataset parsing error in {path}: {e}") from e
    if list(frame.columns) != DATASET_COLUMNS:
        raise FormatError(f"dataset columns {list(frame.columns)} differ from {DATASET_COLUMNS}")

    records = []
    for row in frame.itertuples(index=False):
        images = tuple(decode_image(f) for f in (row.image1, row.image2) if f != NO_IMAGE)
        try:
            index, label = int(row.index), int(row.label)
        except ValueError as e:
            raise FormatError(f"dataset row has a non-integer index or label: {e}") from e
        records.append(DatasetRecord(index=index, images=images, text=row.text, label=label))
    logger.debug(f"Read {len(records)} records from {path}")
    return records


def write_report(path: Path, report: EvalReport, step: Optional[int] = None) -> Path:
    """``metric<TAB>value`` lines; with ``step``, also a summary file in the metrics-log layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    if step is not None:
        summary = path.with_suffix(".summary.tsv")
        summary.write_text("\n".join(report.summary_lines(step)) + "\n", encoding="utf-8")
    return path


def summary_table(rows: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    """One row per configuration, metric columns sorted after the identifying ones."""
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return frame
    leading = [c for c in ("name", "tasks", "backbone") if c in frame.columns]
    rest = sorted(c for c in frame.columns if c not in leading)
    return frame[leading + rest]


def write_summary(path: Path, rows: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    frame = summary_table(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, float_format="%.6f", lineterminator="\n")
    logger.info(f"Wrote summary of {len(frame)} configurations to {path}")
    return frame
