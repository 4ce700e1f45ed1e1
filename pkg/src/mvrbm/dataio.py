"""File formats: schema documents, line-delimited datasets, versioned
model files, key-value training configs, and delimited reports.

All JSON is written with sorted keys and a trailing newline; floats use
Python's shortest-roundtrip repr, so identical inputs produce identical
bytes and full precision survives a round trip.  Report files format
numbers to 6 significant digits.  docs/FORMATS.md describes every layout
byte by byte.
"""

from __future__ import annotations

import json
from dataclasses import fields

import numpy as np

from .exceptions import ValidationError
from .model import ModelParams
from .schema import MixedRecord, VisibleSchema, validate_record
from .training import LogRow, TrainConfig

SCHEMA_FORMAT = "mvrbm-schema"
MODEL_FORMAT = "mvrbm-model"
FORMAT_VERSION = 1


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def _check_format(doc: dict, expected: str, path) -> None:
    found = doc.get("format"), doc.get("version")
    if found != (expected, FORMAT_VERSION):
        raise ValidationError(
            f"{path}: format {found[0]!r} version {found[1]!r} does not match "
            f"supported {expected!r} version {FORMAT_VERSION}"
        )


# ---------------------------------------------------------------------------
# Schema documents


def write_schema(schema: VisibleSchema, path) -> None:
    doc = {"format": SCHEMA_FORMAT, "version": FORMAT_VERSION}
    doc.update(schema.to_dict())
    _dump_json(doc, path)


def read_schema(path) -> VisibleSchema:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    _check_format(doc, SCHEMA_FORMAT, path)
    return VisibleSchema.from_dict(doc)


# ---------------------------------------------------------------------------
# Datasets (one JSON object per line, field names from the schema)


def _value_to_json(value, unit):
    if unit.kind == "binary":
        return int(value)
    if unit.kind == "gaussian":
        return float(value)
    if unit.kind == "categorical":
        return int(value)
    return [int(v) for v in value]  # counts or token list


def _exact_int(v):
    if int(v) != v:
        raise ValidationError(f"expected an integer, got {v!r}")
    return int(v)


def _value_from_json(value, unit):
    if unit.kind == "binary":
        return _exact_int(value)
    if unit.kind == "gaussian":
        return float(value)
    if unit.kind == "categorical":
        return _exact_int(value)
    return tuple(_exact_int(v) for v in value)  # counts and token lists


def write_dataset(records, schema: VisibleSchema, path, labels=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, record in enumerate(records):
            obj = {
                name: _value_to_json(value, unit)
                for value, (name, unit) in zip(record.values, schema.units)
            }
            if labels is not None and labels[i] is not None:
                obj["concept"] = int(labels[i])
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")


def read_dataset(path, schema: VisibleSchema):
    """Returns (records, labels); labels entries are None when absent."""
    records, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            values = []
            for name, unit in schema.units:
                if name not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing field {name!r}")
                try:
                    values.append(_value_from_json(obj[name], unit))
                except ValidationError as exc:
                    raise ValidationError(f"{path}:{lineno}: {name}: {exc}") from None
            record = MixedRecord(values=tuple(values))
            validate_record(record, schema)
            records.append(record)
            labels.append(int(obj["concept"]) if "concept" in obj else None)
    return records, labels


# ---------------------------------------------------------------------------
# Model files (schema travels inline)


def write_model(params: ModelParams, schema: VisibleSchema, path) -> None:
    params.check(schema)
    doc = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "schema": schema.to_dict(),
        "params": {
            "a": [float(v) for v in params.a],
            "b": [float(v) for v in params.b],
            "w": [[float(v) for v in row] for row in params.w],
        },
    }
    _dump_json(doc, path)


def read_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    _check_format(doc, MODEL_FORMAT, path)
    schema = VisibleSchema.from_dict(doc["schema"])
    p = doc["params"]
    params = ModelParams(
        a=np.array(p["a"], dtype=float),
        b=np.array(p["b"], dtype=float),
        w=np.array(p["w"], dtype=float),
    )
    params.check(schema)
    return params, schema


# ---------------------------------------------------------------------------
# Training configs (key = value lines)

_BOOL_FIELDS = {
    "persistent",
    "mean_field_data_term",
    "sample_gaussian",
    "sample_poisson",
    "oracle_exact_gradient",
    "categorical_bias_init",
}
_INT_FIELDS = {
    "n_hidden",
    "cd_steps",
    "batch_size",
    "epochs",
    "groups",
    "seed",
    "neighbors_per_record",
    "non_neighbors_per_record",
}


def read_config(path) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in known or key == "lr_scale":
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            if key in _BOOL_FIELDS:
                if raw.lower() not in ("true", "false", "0", "1"):
                    raise ValidationError(f"{path}:{lineno}: bad boolean {raw!r}")
                kwargs[key] = raw.lower() in ("true", "1")
            elif key in _INT_FIELDS:
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
    return TrainConfig(**kwargs)


def write_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(TrainConfig):
            if f.name == "lr_scale":
                continue
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")


# ---------------------------------------------------------------------------
# Delimited reports (6 significant digits)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if not np.isfinite(v):
        return ""
    return f"{v:.6g}"


def write_delimited(path, header, rows, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if not append:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
            fh.write("\n")


LOG_HEADER = ["epoch", "recon_error", "mean_group_norm", "intra_kl", "inter_kl"]


def log_row_values(row: LogRow):
    return [row.epoch, row.recon_error, row.mean_group_norm, row.intra_kl, row.inter_kl]
