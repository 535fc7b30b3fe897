"""Validation of written output directories against the shipped schemas."""

import csv
import fnmatch
import json
from importlib import resources
from pathlib import Path

import jsonschema

SCHEMAS = {
    "analyze_report.json": "analyze_report.schema.json",
    "timedomain_report.json": "timedomain_report.schema.json",
    "speakers/*.json": "speaker.schema.json",
    "trf_*.json": "trf_model.schema.json",
    "seq_*.json": "seq_header.schema.json",
}


def load_schema(name):
    return json.loads(resources.files("sylrhythm").joinpath("schemas", name).read_text())


def csv_columns():
    return load_schema("csv_columns.json")


def validate_outputs(out_dir):
    """Check every recognised artifact in ``out_dir``.

    Returns ``(checked, problems)``: the relative paths that were validated
    and a list of human-readable problems (empty when all is well).
    """
    out = Path(out_dir)
    checked, problems = [], []
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    for rel in files:
        if rel.endswith(".json"):
            schema = next((s for pat, s in SCHEMAS.items() if fnmatch.fnmatch(rel, pat)), None)
            if schema is None:
                continue
            try:
                doc = json.loads((out / rel).read_text())
                jsonschema.validate(doc, load_schema(schema))
            except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
                problems.append(f"{rel}: {msg}")
            checked.append(rel)
        elif rel.endswith(".csv"):
            cols = next((c for pat, c in csv_columns().items() if fnmatch.fnmatch(rel, pat)), None)
            if cols is None:
                continue
            with open(out / rel, newline="") as fh:
                header = next(csv.reader(fh), [])
            if header != cols:
                problems.append(f"{rel}: columns {header} != expected {cols}")
            checked.append(rel)
    return checked, problems
