"""Meme records, JSONL (de)serialisation and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import DatasetError

KNOWN_FIELDS = {"id", "text", "label", "img", "regions"}


@dataclass
class Region:
    bbox: tuple[float, float, float, float]
    feature: np.ndarray


@dataclass
class MemeRecord:
    id: str
    text: str
    label: int
    regions: list[Region]
    image_path: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int | None:
        return int(self.regions[0].feature.shape[0]) if self.regions else None

    def features(self) -> np.ndarray:
        return np.stack([r.feature for r in self.regions]) if self.regions else np.zeros((0, 0))

    def boxes(self) -> np.ndarray:
        return np.array([r.bbox for r in self.regions], dtype=np.float64).reshape(-1, 4)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "text": self.text, "label": self.label}
        if self.image_path is not None:
            out["img"] = self.image_path
        out["regions"] = [
            {"bbox": [float(v) for v in r.bbox], "feat": [float(v) for v in r.feature]}
            for r in self.regions
        ]
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "MemeRecord":
        if not isinstance(obj, dict):
            raise DatasetError("record must be a JSON object")
        rid = obj.get("id")
        if not isinstance(rid, str) or not rid:
            raise DatasetError("record field 'id' must be a non-empty string")
        text = obj.get("text")
        if not isinstance(text, str):
            raise DatasetError(f"record {rid!r}: field 'text' must be a string")
        label = obj.get("label")
        if label not in (0, 1) or isinstance(label, bool):
            raise DatasetError(f"record {rid!r}: field 'label' must be 0 or 1, got {label!r}")
        img = obj.get("img")
        if img is not None and not isinstance(img, str):
            raise DatasetError(f"record {rid!r}: field 'img' must be a string")
        raw_regions = obj.get("regions", [])
        if not isinstance(raw_regions, list):
            raise DatasetError(f"record {rid!r}: field 'regions' must be a list")
        regions = []
        dim = None
        for j, reg in enumerate(raw_regions):
            where = f"record {rid!r}: regions[{j}]"
            try:
                bbox = tuple(float(v) for v in reg["bbox"])
                feat = np.array(reg["feat"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{where}: needs numeric 'bbox' and 'feat' ({exc})") from exc
            if len(bbox) != 4:
                raise DatasetError(f"{where}.bbox must have 4 values")
            x1, y1, x2, y2 = bbox
            if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
                raise DatasetError(f"{where}.bbox {list(bbox)} violates 0 <= x1 < x2 <= 1, 0 <= y1 < y2 <= 1")
            if feat.ndim != 1 or feat.size == 0 or not np.all(np.isfinite(feat)):
                raise DatasetError(f"{where}.feat must be a non-empty finite vector")
            if dim is not None and feat.size != dim:
                raise DatasetError(f"{where}.feat has dimension {feat.size}, expected {dim}")
            dim = feat.size
            regions.append(Region(bbox, feat))
        extra = {k: v for k, v in obj.items() if k not in KNOWN_FIELDS}
        return cls(id=rid, text=text, label=int(label), regions=regions, image_path=img, extra=extra)


@dataclass
class DatasetSplit:
    records: list[MemeRecord]

    def __post_init__(self):
        self._by_id = {}
        dim = None
        for rec in self.records:
            if rec.id in self._by_id:
                raise DatasetError(f"duplicate record id {rec.id!r}")
            self._by_id[rec.id] = rec
            if rec.feature_dim is not None:
                if dim is not None and rec.feature_dim != dim:
                    raise DatasetError(
                        f"record {rec.id!r}: field 'regions' feature dimension {rec.feature_dim} "
                        f"differs from {dim} used by earlier records"
                    )
                dim = rec.feature_dim
        self.feature_dim = dim

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MemeRecord]:
        return iter(self.records)

    def __getitem__(self, i: int) -> MemeRecord:
        return self.records[i]

    def get(self, record_id: str) -> MemeRecord | None:
        return self._by_id.get(record_id)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


def load_jsonl(path) -> DatasetSplit:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                records.append(MemeRecord.from_json(obj))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return DatasetSplit(records)


def save_jsonl(split: DatasetSplit, path) -> None:
    lines = [json.dumps(r.to_json(), ensure_ascii=False) for r in split]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def split_stats(split: DatasetSplit) -> dict[str, int]:
    hateful = sum(1 for r in split if r.label == 1)
    return {"hateful_count": hateful, "nonhateful_count": len(split) - hateful}


def load_truth(path) -> dict[str, dict[str, Any]]:
    """Ground-truth sidecar: one ``{"id", "keyword", "region_idx"}`` object per line."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
                out[obj["id"]] = obj
    return out
