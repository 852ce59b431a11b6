"""Shared plumbing for the experiment scripts: one BLAS thread, dataclass
configs exposed as command-line options, JSON result files."""
import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import dataclasses
import json
import platform
import time
from pathlib import Path

RESULTS = Path(__file__).resolve().parent.parent / "results"


def parse_config(cls, description):
    """Instantiate dataclass ``cls`` with fields overridable as --field value."""
    parser = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else int
            parser.add_argument(flag, type=kind, nargs="+", default=list(default))
        else:
            parser.add_argument(flag, type=type(default), default=default)
    parser.add_argument("--out", type=Path, help="result JSON (default: results/<script>.json)")
    args = vars(parser.parse_args())
    out = args.pop("out")
    return cls(**args), out


def write_results(name, config, payload, out=None):
    path = out or RESULTS / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"config": dataclasses.asdict(config), "machine": platform.processor() or
              platform.machine(), "python": platform.python_version(),
              "written": time.strftime("%Y-%m-%dT%H:%M:%S"), **payload}
    path.write_text(json.dumps(record, indent=2) + "\n")
    print(f"wrote {path}")
    return path
