"""Validate run outputs against the shipped JSON schemas with the jsonschema package."""

import argparse
import json
import pathlib
import sys

import jsonschema

DOCS = {
    "metrics.json": "metrics_report.schema.json",
    "calibration_report.json": "calibration_report.schema.json",
    "config.json": "run_config.schema.json",
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("schema_dir", type=pathlib.Path)
    parser.add_argument("run_dir", type=pathlib.Path)
    args = parser.parse_args()

    failed = False
    for doc, schema in DOCS.items():
        schema_json = json.loads((args.schema_dir / schema).read_text())
        jsonschema.Draft202012Validator.check_schema(schema_json)
        validator = jsonschema.Draft202012Validator(schema_json)
        errors = list(validator.iter_errors(json.loads((args.run_dir / doc).read_text())))
        for e in errors:
            print(f"{doc}: {'/'.join(map(str, e.absolute_path))}: {e.message}")
        print(f"{doc}: {'ok' if not errors else 'INVALID'}")
        failed = failed or bool(errors)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
