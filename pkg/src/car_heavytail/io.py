"""Dataset loading, run configuration and result serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np
from referencing import Registry, Resource

from .designs import DesignConfig
from .errors import ValidationError
from .estimators import EstimatorConfig, TrialData
from .inference import EstimateReport
from .pipeline import DEFAULT_ESTIMATORS, EstimatorSpec, analyze_trial, parse_specs
from .score import TruncationThresholds
from .sim import EstimatorSummary, OutcomeModelSpec, SimConfig, SimResult

SCHEMA_VERSION = "1.0"
REPORT_COLUMNS = ("estimator", "tau_hat", "se", "ci_lo", "ci_hi", "length")
SIM_COLUMNS = ("estimator", "bias", "sd", "rmse", "se", "cp", "length", "reps", "note")
REQUIRED_COLUMNS = ("outcome", "treatment", "stratum")
COVARIATE_PREFIX = "cov_"


def _schema(name: str) -> dict:
    text = resources.files("car_heavytail").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validator(name: str) -> jsonschema.Draft202012Validator:
    registry = Registry().with_resources(
        (f"car-heavytail/{s}", Resource.from_contents(_schema(s))) for s in ("run_config", "sim_config")
    )
    return jsonschema.Draft202012Validator(_schema(name), registry=registry)


def validate_config(raw: dict, kind: str = "run_config") -> dict:
    errors = sorted(_validator(kind).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(f"invalid configuration at {where}: {err.message}")
    return raw


def load_dataset(path) -> TrialData:
    """Read a CSV with ``outcome``, ``treatment``, ``stratum`` and optional ``cov_*`` columns.

    Stratum labels (any strings) become dense ids in order of first appearance;
    the original labels are kept in ``stratum_names``. Row numbers in error
    messages count data rows from 1.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: no header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
        cov_cols = [h for h in header if h.startswith(COVARIATE_PREFIX)]
        y, a, s, cov = [], [], [], []
        ids: dict[str, int] = {}
        for row_no, row in enumerate(reader, start=1):
            try:
                y.append(float(row["outcome"]))
            except (TypeError, ValueError):
                raise ValidationError(f"row {row_no}: outcome {row['outcome']!r} is not numeric") from None
            if not math.isfinite(y[-1]):
                raise ValidationError(f"row {row_no}: outcome must be finite")
            t = (row["treatment"] or "").strip()
            if t not in ("0", "1", "0.0", "1.0"):
                raise ValidationError(f"row {row_no}: treatment {t!r} is not 0 or 1")
            a.append(int(float(t)))
            label = (row["stratum"] or "").strip()
            if label == "":
                raise ValidationError(f"row {row_no}: empty stratum")
            s.append(ids.setdefault(label, len(ids)))
            cov.append([row[c] for c in cov_cols])
    if not y:
        raise ValidationError(f"{path}: no data rows")
    covariates = np.array(cov, dtype=object) if cov_cols else None
    return TrialData(np.array(y), np.array(a, dtype=np.int8), np.array(s, dtype=np.int64), covariates=covariates,
                     stratum_names=tuple(ids))


def write_dataset(data: TrialData, path) -> None:
    """Write ``data`` in the layout read by :func:`load_dataset` (full float precision)."""
    names = data.stratum_names
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for yi, ai, si in zip(data.y, data.a, data.s):
            w.writerow([repr(float(yi)), int(ai), names[si] if names else int(si)])


@dataclass
class RunConfig:
    estimators: list[EstimatorSpec] = field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    design: DesignConfig = field(default_factory=DesignConfig)
    estimator_config: EstimatorConfig = field(default_factory=EstimatorConfig)
    alpha: float = 0.05
    seed: int | None = None
    pi_mode: str = "known"

    def estimator_config_for(self, data: TrialData) -> EstimatorConfig:
        from dataclasses import replace

        pi = self.design.pi if self.pi_mode == "known" else "estimate"
        return replace(self.estimator_config, pi=pi)


def _estimator_config(score: dict) -> EstimatorConfig:
    kw = dict(score)
    if isinstance(kw.get("thresholds"), dict):
        kw["thresholds"] = TruncationThresholds(**kw["thresholds"])
    return EstimatorConfig(**kw)


def _design(raw: dict | None) -> DesignConfig:
    raw = dict(raw or {})
    if raw.get("weights") is not None:
        raw["weights"] = tuple(raw["weights"])
    return DesignConfig(**raw)


def parse_run_config(raw: dict) -> RunConfig:
    validate_config(raw, "run_config")
    return RunConfig(
        estimators=parse_specs(raw.get("estimators", DEFAULT_ESTIMATORS)),
        design=_design(raw.get("design")),
        estimator_config=_estimator_config(raw.get("score", {})),
        alpha=float(raw.get("alpha", 0.05)),
        seed=raw.get("seed"),
        pi_mode=raw.get("pi_mode", "known"),
    )


def load_json(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def load_run_config(path) -> RunConfig:
    return parse_run_config(load_json(path))


def parse_sim_config(raw: dict) -> list[tuple[dict, SimConfig]]:
    """Expand a simulation config into ``(grid labels, SimConfig)`` cells."""
    validate_config(raw, "sim_config")
    outcome = dict(raw.get("outcome", {}))
    design = dict(raw.get("design", {}))
    if "pi" in outcome and "pi" not in design:
        design["pi"] = outcome["pi"]
    outcome.setdefault("pi", design.get("pi", 0.5))
    grid = raw.get("grid", {})
    models = grid.get("models", [outcome.get("model_id", 1)])
    tails = grid.get("tails", [outcome.get("tail", "cauchy")])
    schemes = grid.get("schemes", [design.get("scheme", "simple")])
    est_config = _estimator_config(dict(raw.get("score", {}), pi=outcome["pi"]))
    cells = []
    for scheme in schemes:
        for model in models:
            for tail in tails:
                spec = OutcomeModelSpec(**dict(outcome, model_id=model, tail=tail))
                cfg = SimConfig(
                    outcome=spec,
                    design=_design(dict(design, scheme=scheme)),
                    estimators=tuple(parse_specs(raw.get("estimators", DEFAULT_ESTIMATORS))),
                    estimator_config=est_config,
                    reps=int(raw.get("reps", 500)),
                    alpha=float(raw.get("alpha", 0.05)),
                    master_seed=int(raw.get("seed", 0)),
                )
                cells.append(({"scheme": cfg.design.scheme, "model": model, "tail": spec.tail}, cfg))
    return cells


def analyze(data: TrialData, config: RunConfig) -> list[EstimateReport]:
    """Run the configured estimators; one failing estimator does not stop the rest."""
    return analyze_trial(data, config.estimators, config.estimator_config_for(data), config.design,
                         config.alpha, seed=config.seed)


def fmt(value) -> str:
    """Six significant digits; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(value)


def _round(value):
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return None if not math.isfinite(v) else float(f"{v:.6g}")
    if isinstance(value, np.integer):
        return int(value)
    return value


def report_rows(reports: Iterable[EstimateReport]) -> list[dict]:
    rows = []
    for r in reports:
        rows.append({
            "estimator": r.estimator,
            "tau_hat": r.tau_hat,
            "se": r.se,
            "ci_lo": r.ci_lo,
            "ci_hi": r.ci_hi,
            "length": r.length,
            "method": r.method,
            "alpha": r.alpha,
            "n": r.n,
            "error": r.error,
        })
    return rows


def sim_rows(result: SimResult, labels: dict | None = None) -> list[dict]:
    rows = []
    for s in result.summaries:
        row = dict(labels or {})
        row.update({c: getattr(s, c) for c in SIM_COLUMNS})
        rows.append(row)
    return rows


def _payload(obj) -> tuple[str, list[dict], Sequence[str]]:
    if isinstance(obj, SimResult):
        return "simulation", sim_rows(obj), SIM_COLUMNS
    if isinstance(obj, list) and obj and isinstance(obj[0], dict):
        cols = list(obj[0])
        return ("simulation" if "sd" in cols else "analysis"), obj, cols
    reports = list(obj)
    if reports and not isinstance(reports[0], EstimateReport):
        raise ValidationError("emit expects estimate reports, a simulation result or rows")
    return "analysis", report_rows(reports), REPORT_COLUMNS


def emit(obj, fmt_name: str = "csv", path=None, stream=None) -> str:
    """Serialize reports or a simulation result as CSV or JSON.

    CSV for reports has exactly the columns estimator, tau_hat, se, ci_lo,
    ci_hi, length; JSON carries every field plus ``schema_version``. The text
    is written to ``path`` (or ``stream``) when given and always returned.
    """
    kind, rows, columns = _payload(obj)
    fmt_name = fmt_name.lower()
    if fmt_name == "csv":
        import io as _io

        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])
        text = buf.getvalue()
    elif fmt_name == "json":
        body: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "rows": [{k: _round(v) for k, v in row.items()} for row in rows],
        }
        if isinstance(obj, SimResult):
            body.update(reps=obj.reps, failures=obj.failures, retries=obj.retries)
        text = json.dumps(body, indent=2, allow_nan=False) + "\n"
    else:
        raise ValidationError(f"unknown output format {fmt_name!r}; expected csv or json")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    elif stream is not None:
        stream.write(text)
    return text


def summary_from_row(row: dict) -> EstimatorSummary:
    return EstimatorSummary(**{c: row.get(c) for c in SIM_COLUMNS})
