"""Command-line entry point: ``diabolo <config> [--override key=value]...``.

A run is described by one TOML or JSON document with three blocks:

``model``
    ``twice_j`` plus either a ``preset`` table (``name`` = ``biaxial``,
    ``cubic`` or ``biaxial_tetragonal`` with its constants) or a ``terms``
    list of ``{coefficient, word}`` tables.
``command``
    ``name`` selects one of ``spectrum``, ``find``, ``chern``, ``sumrules``,
    ``sweep`` or ``effective``; the remaining keys are its options.
``output``
    ``format`` (``csv`` or ``json``), ``path`` (stdout when absent) and
    ``precision`` in significant digits.

Exit status: 0 success, 1 computation error, 2 configuration error,
3 sum-rule audit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import continuation, effective
from .errors import ConfigError, DiaboloError, ParityError, SumRuleError
from .search import DiabolicalPointRecord, SearchConfig, search
from .spin import (
    Biaxial,
    BiaxialPlusTetragonal,
    Cubic,
    FieldVector,
    HamiltonianModel,
    HamiltonianTerm,
    SpinQuantum,
    assemble_batch,
    format_half,
    parity_check,
)
from .topology import (
    ChargeVector,
    DiabolicityMultiplet,
    charges_for_cluster,
    verify_global_sum_rule,
    verify_point_sum_rule,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("diabolo")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_AUDIT = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


Vec3 = Annotated[List[float], Field(min_length=3, max_length=3)]
Half = Union[int, float, str]


def _as_half(v) -> Fraction:
    try:
        return effective._half(v)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"{v!r} is not an integer or half-integer") from exc


class BiaxialPreset(_Strict):
    name: Literal["biaxial"]
    K: float
    D: float


class CubicPreset(_Strict):
    name: Literal["cubic"]
    K: float
    E0: float = 0.0


class TetragonalPreset(_Strict):
    name: Literal["biaxial_tetragonal"]
    K: float
    D: float
    C: float


class Term(_Strict):
    coefficient: float
    word: Annotated[str, Field(pattern=r"^[xyzXYZ]*$")]


class ModelBlock(_Strict):
    twice_j: Annotated[int, Field(ge=1, le=200)]
    preset: Optional[Annotated[Union[BiaxialPreset, CubicPreset, TetragonalPreset], Field(discriminator="name")]] = None
    terms: Optional[List[Term]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.terms is None):
            raise ValueError("give exactly one of 'preset' or 'terms'")
        return self

    def build(self) -> HamiltonianModel:
        spin = SpinQuantum(self.twice_j)
        if self.terms is not None:
            return HamiltonianModel(spin, tuple(HamiltonianTerm(t.coefficient, t.word) for t in self.terms))
        p = self.preset
        if isinstance(p, BiaxialPreset):
            zf = Biaxial(p.K, p.D)
        elif isinstance(p, CubicPreset):
            zf = Cubic(p.E0, p.K)
        else:
            zf = BiaxialPlusTetragonal(p.K, p.D, p.C)
        return HamiltonianModel(spin, zf)


class SearchOptions(_Strict):
    r_max: Optional[Annotated[float, Field(gt=0)]] = None
    seed_density: Annotated[int, Field(ge=2)] = 21
    eps_deg: Annotated[float, Field(gt=0)] = 1e-9
    eps_pos: Optional[Annotated[float, Field(gt=0)]] = None
    pairs: Optional[List[Half]] = None
    face_cells: Annotated[int, Field(ge=1)] = 4
    sphere_grid: Annotated[List[Annotated[int, Field(ge=4)]], Field(min_length=2, max_length=2)] = [64, 64]
    escalate: bool = True

    @field_validator("pairs")
    @classmethod
    def _halves(cls, v):
        if v is not None:
            for x in v:
                _as_half(x)
        return v

    def search_config(self) -> SearchConfig:
        pairs = None if self.pairs is None else tuple(float(_as_half(p)) for p in self.pairs)
        return SearchConfig(
            r_max=self.r_max,
            seed_density=self.seed_density,
            eps_deg=self.eps_deg,
            eps_pos=self.eps_pos,
            pairs=pairs,
            face_cells=self.face_cells,
            sphere_grid=tuple(self.sphere_grid),
            escalate=self.escalate,
        )


class Line(_Strict):
    start: Vec3
    stop: Vec3
    samples: Annotated[int, Field(ge=2)]


class SpectrumCommand(_Strict):
    name: Literal["spectrum"]
    fields: Optional[List[Vec3]] = None
    line: Optional[Line] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.fields is None) == (self.line is None):
            raise ValueError("give exactly one of 'fields' or 'line'")
        return self


class FindCommand(SearchOptions):
    name: Literal["find"]


class SumRulesCommand(SearchOptions):
    name: Literal["sumrules"]


class ChernCommand(_Strict):
    name: Literal["chern"]
    center: Vec3
    radius: Annotated[float, Field(gt=0)]
    grid: Annotated[List[Annotated[int, Field(ge=4)]], Field(min_length=2, max_length=2)] = [64, 64]


class SweepCommand(_Strict):
    name: Literal["sweep"]
    parameter: str
    t0: float
    t1: float
    steps: Annotated[int, Field(ge=2)]
    full_every: Annotated[int, Field(ge=1)] = 10
    max_displacement: Optional[Annotated[float, Field(gt=0)]] = None
    search: SearchOptions = SearchOptions()

    @model_validator(mode="after")
    def _distinct(self):
        if self.t0 == self.t1:
            raise ValueError("t0 and t1 must differ")
        return self


class EffectiveCommand(SearchOptions):
    name: Literal["effective"]
    rows: Optional[List[Annotated[List[Half], Field(min_length=2, max_length=2)]]] = None

    @field_validator("rows")
    @classmethod
    def _row_halves(cls, v):
        if v is not None:
            for row in v:
                for x in row:
                    _as_half(x)
        return v


Command = Annotated[
    Union[SpectrumCommand, FindCommand, ChernCommand, SumRulesCommand, SweepCommand, EffectiveCommand],
    Field(discriminator="name"),
]


class OutputBlock(_Strict):
    format: Literal["csv", "json"] = "csv"
    path: Optional[str] = None
    precision: Annotated[int, Field(ge=1, le=17)] = 17


class RunConfig(_Strict):
    model: ModelBlock
    command: Command
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _checks(self):
        try:
            model = self.model.build()
        except ValueError as exc:
            raise ValueError(f"model: {exc}") from exc
        name = self.command.name
        if name != "spectrum" and not parity_check(model):
            raise ParityError(
                f"command '{name}' needs a time-reversal-even zero-field Hamiltonian; the term list has odd-degree words"
            )
        if name == "sweep":
            if not model.is_preset:
                raise ValueError("sweep needs a preset model with a named parameter")
            if not hasattr(model.zero_field, self.command.parameter):
                raise ValueError(f"preset '{self.model.preset.name}' has no parameter '{self.command.parameter}'")
        if name == "effective" and not isinstance(model.zero_field, Biaxial):
            raise ValueError("effective needs the 'biaxial' preset")
        return self


# ---------------------------------------------------------------------------
# parsing


def _load_text(text: str, suffix: str = "") -> dict:
    if suffix == ".json" or (not suffix and text.lstrip().startswith("{")):
        return json.loads(text)
    return tomllib.loads(text)


def _override_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        pass
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_override(doc: dict, item: str) -> None:
    """Set ``a.b.c=value`` in ``doc``; numeric segments index lists."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override key {key!r} is malformed")
    node = doc
    for i, part in enumerate(parts[:-1]):
        nxt = parts[i + 1]
        if isinstance(node, list):
            node = node[int(part)]
            continue
        if part not in node or not isinstance(node[part], (dict, list)):
            node[part] = [] if nxt.isdigit() else {}
        node = node[part]
    last = parts[-1]
    value = _override_value(raw)
    if isinstance(node, list):
        idx = int(last)
        if idx == len(node):
            node.append(value)
        else:
            node[idx] = value
    else:
        node[last] = value


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str, overrides=(), suffix: str = "") -> RunConfig:
    """Validate a configuration document; raises :class:`ConfigError` or :class:`ParityError`."""
    try:
        doc = _load_text(text, suffix)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"could not parse configuration: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a table/object at the top level")
    for item in overrides:
        apply_override(doc, item)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        for err in exc.errors():
            cause = (err.get("ctx") or {}).get("error")
            if isinstance(cause, ParityError):
                raise cause from None
        raise ConfigError(_format_validation(exc)) from None


# ---------------------------------------------------------------------------
# serialization


def _num(x, precision: int):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to serialize non-finite value {x}")
    return float(f"{x:.{precision}g}")


def _cell(x, precision: int) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"refusing to serialize non-finite value {x}")
        return f"{x:.{precision}g}"
    if x is None:
        return ""
    return str(x)


def record_to_json(rec: DiabolicalPointRecord, precision: int = 17) -> dict:
    out = {
        "cluster_id": int(rec.cluster_id),
        "position": [_num(v, precision) for v in rec.position],
        "span": [float(rec.mu_top), float(rec.mu_bottom)],
        "order": int(rec.order),
        "charges": None if rec.charges is None else [int(v) for v in rec.charges.q],
        "indices": None
        if rec.indices is None
        else {"top": float(rec.indices.top), "values": [int(v) for v in rec.indices.indices]},
        "residual_gap": _num(rec.residual_gap, precision),
        "suspect": bool(rec.suspect),
    }
    return out


def record_from_json(d: dict, spin: SpinQuantum) -> DiabolicalPointRecord:
    charges = None if d["charges"] is None else ChargeVector(np.array(d["charges"], dtype=int), spin)
    ind = d["indices"]
    indices = None if ind is None else DiabolicityMultiplet(float(ind["top"]), tuple(int(v) for v in ind["values"]))
    return DiabolicalPointRecord(
        position=FieldVector.of(d["position"]),
        span=(float(d["span"][0]), float(d["span"][1])),
        order=int(d["order"]),
        charges=charges,
        indices=indices,
        cluster_id=int(d["cluster_id"]),
        residual_gap=float(d["residual_gap"]),
        suspect=bool(d["suspect"]),
    )


def _report_json(r) -> dict:
    return {
        "rule": r.rule,
        "label": r.label,
        "lhs": int(r.lhs),
        "rhs": int(r.rhs),
        "residual": int(r.residual),
        "passed": bool(r.passed),
    }


def catalog_header(spin: SpinQuantum) -> list:
    levels = [spin.j - r for r in range(spin.dim)]
    cols = ["cluster_id", "hx", "hy", "hz", "mu_top", "mu_bottom", "order_g"]
    cols += [f"q_{format_half(mu)}" for mu in levels]
    cols += [f"d_{format_half(mu)}_{format_half(mu - 1)}" for mu in levels[:-1]]
    return cols + ["residual_gap", "suspect_flag"]


def catalog_rows(records, spin: SpinQuantum) -> list:
    rows = []
    for rec in records:
        q = list(rec.charges.q) if rec.charges is not None else [0] * spin.dim
        d = [0] * (spin.dim - 1)
        if rec.indices is not None:
            for (top, _), value in zip(rec.indices.pairs, rec.indices.indices):
                d[int(round(spin.j - top))] = int(value)
        rows.append(
            [rec.cluster_id, *rec.position, format_half(rec.mu_top), format_half(rec.mu_bottom), rec.order]
            + [int(v) for v in q]
            + d
            + [rec.residual_gap, bool(rec.suspect)]
        )
    return rows


def _csv_text(header, rows, precision) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x, precision) for x in row])
    return buf.getvalue()


class Result:
    """Tables and a JSON document produced by one command."""

    def __init__(self, header, rows, doc, status=EXIT_OK, partial=False, extra_tables=None, message=""):
        self.header = header
        self.rows = rows
        self.doc = doc
        self.status = status
        self.partial = partial
        self.extra_tables = extra_tables or {}
        self.message = message


# ---------------------------------------------------------------------------
# commands


def _spectrum(model: HamiltonianModel, cmd: SpectrumCommand, out: OutputBlock) -> Result:
    if cmd.fields is not None:
        fields = np.array(cmd.fields, dtype=float).reshape(-1, 3)
    else:
        s = np.linspace(0.0, 1.0, cmd.line.samples)[:, None]
        a, b = np.array(cmd.line.start), np.array(cmd.line.stop)
        fields = a + s * (b - a)
    energies = np.linalg.eigvalsh(assemble_batch(model, fields))
    spin = model.spin
    levels = [spin.j - r for r in range(spin.dim)]
    # ascending energies: rank r = highest level first
    table = energies[:, ::-1]
    header = ["sample", "hx", "hy", "hz"] + [f"E_{format_half(mu)}" for mu in levels]
    rows = [[i, *fields[i], *table[i]] for i in range(len(fields))]
    p = out.precision
    doc = {
        "command": "spectrum",
        "levels": [float(mu) for mu in levels],
        "samples": [
            {"field": [_num(v, p) for v in fields[i]], "energies": [_num(v, p) for v in table[i]]}
            for i in range(len(fields))
        ],
    }
    return Result(header, rows, doc)


def _find(model: HamiltonianModel, cmd: FindCommand, out: OutputBlock) -> Result:
    outcome = search(model, cmd.search_config())
    spin = model.spin
    ok = outcome.passed
    doc = {
        "command": "find",
        "twice_j": spin.twice_j,
        "region_radius": _num(outcome.region_radius, out.precision),
        "escalated": bool(outcome.escalated),
        "records": [record_to_json(r, out.precision) for r in outcome.records],
        "audit": [_report_json(r) for r in outcome.audit],
        "completeness": [_report_json(r) for r in outcome.completeness],
    }
    msg = "" if ok else "index sum-rule audit failed; catalog is incomplete"
    return Result(
        catalog_header(spin),
        catalog_rows(outcome.records, spin),
        doc,
        EXIT_OK if ok else EXIT_AUDIT,
        partial=not ok,
        message=msg,
    )


def _chern(model: HamiltonianModel, cmd: ChernCommand, out: OutputBlock) -> Result:
    q = charges_for_cluster(model, np.array(cmd.center), cmd.radius, tuple(cmd.grid))
    spin = model.spin
    rows = [[format_half(spin.j - r), int(v)] for r, v in enumerate(q.q)]
    doc = {
        "command": "chern",
        "center": [_num(v, out.precision) for v in cmd.center],
        "radius": _num(cmd.radius, out.precision),
        "levels": [float(spin.j - r) for r in range(spin.dim)],
        "charges": [int(v) for v in q.q],
    }
    return Result(["mu", "chern"], rows, doc)


def cluster_charges(records) -> dict:
    """Charge vector of each cluster, summed over its member records."""
    out = {}
    for rec in records:
        if rec.charges is None:
            continue
        cid = rec.cluster_id
        out[cid] = rec.charges if cid not in out else out[cid] + rec.charges
    return out


def _sumrules(model: HamiltonianModel, cmd: SumRulesCommand, out: OutputBlock) -> Result:
    cfg = cmd.search_config()
    outcome = search(model, cfg)
    reports = [
        verify_point_sum_rule(q, f"cluster={cid}") for cid, q in sorted(cluster_charges(outcome.records).items())
    ]
    reports += list(outcome.audit)
    reports += verify_global_sum_rule(model, grid=tuple(cmd.sphere_grid))
    ok = all(r.passed for r in reports) and outcome.passed
    rows = [[r.rule, r.label, int(r.lhs), int(r.rhs), int(r.residual), bool(r.passed)] for r in reports]
    doc = {"command": "sumrules", "twice_j": model.spin.twice_j, "reports": [_report_json(r) for r in reports]}
    return Result(
        ["rule", "label", "lhs", "rhs", "residual", "passed"],
        rows,
        doc,
        EXIT_OK if ok else EXIT_AUDIT,
        message="" if ok else "sum-rule audit failed",
    )


def _sweep_tables(result, precision: int):
    track_rows = []
    for tr in result.tracks:
        for t, site in tr.samples:
            track_rows.append([tr.track_id, format_half(tr.pair), t, *site.position, site.D, tr.status])
    event_rows = []
    for ev in result.events:
        event_rows.append(
            [
                ev.event_id,
                format_half(ev.pair),
                ev.t_interval[0],
                ev.t_interval[1],
                ev.kind,
                " ".join(str(i) for i in ev.incoming),
                " ".join(str(i) for i in ev.outgoing),
                *ev.center,
                bool(ev.conserved),
            ]
        )
    doc = {
        "tracks": [
            {
                "track_id": tr.track_id,
                "pair": float(tr.pair),
                "status": tr.status,
                "born_event": tr.born_event,
                "merged_event": tr.merged_event,
                "samples": [
                    {"t": _num(t, precision), "position": [_num(v, precision) for v in s.position], "D": int(s.D)}
                    for t, s in tr.samples
                ],
            }
            for tr in result.tracks
        ],
        "events": [
            {
                "event_id": ev.event_id,
                "pair": float(ev.pair),
                "t_interval": [_num(v, precision) for v in ev.t_interval],
                "kind": ev.kind,
                "incoming": list(ev.incoming),
                "outgoing": list(ev.outgoing),
                "center": [_num(v, precision) for v in ev.center],
                "conserved": bool(ev.conserved),
            }
            for ev in result.events
        ],
        "audit": [
            {"t": _num(s.t, precision), "totals": {format_half(mu): [int(a), int(b)] for mu, (a, b) in s.audit.items()}}
            for s in result.samples
        ],
        "flagged": [str(f) for f in result.flagged],
    }
    return track_rows, event_rows, doc


_TRACK_HEADER = ["track_id", "pair", "t", "hx", "hy", "hz", "D", "status"]
_EVENT_HEADER = ["event_id", "pair", "t_low", "t_high", "kind", "incoming", "outgoing", "hx", "hy", "hz", "conserved"]


def _sweep(model: HamiltonianModel, cmd: SweepCommand, out: OutputBlock) -> Result:
    spec = continuation.SweepSpec(
        model=model,
        parameter=cmd.parameter,
        t0=cmd.t0,
        t1=cmd.t1,
        steps=cmd.steps,
        search=cmd.search.search_config(),
        full_every=cmd.full_every,
        max_displacement=cmd.max_displacement,
    )
    status, partial, message = EXIT_OK, False, ""
    try:
        result = continuation.sweep(spec)
    except SumRuleError as err:
        result = getattr(err, "partial", None)
        if result is None:
            raise
        status, partial, message = EXIT_AUDIT, True, str(err)
    if result.flagged and status == EXIT_OK:
        status, message = EXIT_AUDIT, f"{len(result.flagged)} unbalanced track changes"
    tracks, events, doc = _sweep_tables(result, out.precision)
    doc = {"command": "sweep", "parameter": cmd.parameter, **doc}
    return Result(
        _TRACK_HEADER, tracks, doc, status, partial, extra_tables={"events": (_EVENT_HEADER, events)}, message=message
    )


def _effective(model: HamiltonianModel, cmd: EffectiveCommand, out: OutputBlock) -> Result:
    spin = model.spin
    J = Fraction(spin.twice_j, 2)
    K, D = model.zero_field.K, model.zero_field.D
    rows_wanted = (
        [(_as_half(a), _as_half(b)) for a, b in cmd.rows] if cmd.rows is not None else effective.all_level_pairs(J)
    )
    cfg = cmd.search_config()
    if cfg.pairs is None:
        cfg.pairs = tuple(sorted({float(effective.pair_for_levels(J, M, Mp)[0]) for M, Mp in rows_wanted}, reverse=True))
    outcome = search(model, cfg)
    p = out.precision
    table, entries = [], []
    for M, Mp in rows_wanted:
        for mode, rep in effective.compare_modes(model, K, D, M, Mp, outcome.records).items():
            pred = rep.prediction
            for node in rep.nodes:
                f = node.found
                table.append(
                    [
                        format_half(M),
                        format_half(Mp),
                        format_half(pred.pair[0]),
                        mode,
                        pred.parity,
                        node.node[0],
                        node.node[2],
                        *(f if f is not None else (None, None, None)),
                        node.error if f is not None else None,
                        node.relative_error if f is not None else None,
                        bool(node.matched),
                    ]
                )
            entries.append(
                {
                    "M": str(M),
                    "M_prime": str(Mp),
                    "mode": mode,
                    "pair": [float(v) for v in pred.pair],
                    "parity": pred.parity,
                    "hx0": _num(pred.hx0, p),
                    "hz0": _num(pred.hz0, p),
                    "tolerance": _num(rep.tolerance, p),
                    "nodes": [
                        {
                            "node": [_num(v, p) for v in n.node],
                            "found": None if n.found is None else [_num(v, p) for v in n.found],
                            "error": None if n.found is None else _num(n.error, p),
                            "relative_error": None if n.found is None else _num(n.relative_error, p),
                            "matched": bool(n.matched),
                        }
                        for n in rep.nodes
                    ],
                }
            )
    ok = outcome.passed
    doc = {"command": "effective", "twice_j": spin.twice_j, "rows": entries, "audit": [_report_json(r) for r in outcome.audit]}
    header = [
        "M", "M_prime", "mu_top", "mode", "parity", "node_hx", "node_hz",
        "found_hx", "found_hy", "found_hz", "error", "relative_error", "matched",
    ]  # fmt: skip
    return Result(
        header,
        table,
        doc,
        EXIT_OK if ok else EXIT_AUDIT,
        partial=not ok,
        message="" if ok else "search audit failed; comparison may miss points",
    )


_COMMANDS = {
    "spectrum": _spectrum,
    "find": _find,
    "chern": _chern,
    "sumrules": _sumrules,
    "sweep": _sweep,
    "effective": _effective,
}


# ---------------------------------------------------------------------------
# output


def _partial_path(path: Path) -> Path:
    return path.with_name(path.name + ".partial")


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix}")


def write_result(res: Result, out: OutputBlock, stdout=None) -> list:
    """Write ``res``; returns the paths written (empty for stdout).

    JSON carries a ``partial`` field. CSV keeps its fixed columns, so a
    partial CSV goes to ``<path>.partial`` instead of ``<path>``.
    """
    stdout = stdout or sys.stdout
    if out.format == "json":
        doc = dict(res.doc)
        doc["partial"] = bool(res.partial)
        text = json.dumps(doc, allow_nan=False, indent=1, ensure_ascii=False) + "\n"
        tables = {}
    else:
        text = _csv_text(res.header, res.rows, out.precision)
        tables = {tag: _csv_text(h, rows, out.precision) for tag, (h, rows) in res.extra_tables.items()}
    if out.path is None:
        stdout.write(text)
        for tag, t in tables.items():
            log.info("%s table omitted on stdout; set output.path to write it", tag)
        return []
    path = Path(out.path)
    written = []
    target = _partial_path(path) if res.partial and out.format == "csv" else path
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8", newline="")
    written.append(target)
    for tag, t in tables.items():
        extra = _sibling(path, tag)
        if res.partial:
            extra = _partial_path(extra)
        extra.write_text(t, encoding="utf-8", newline="")
        written.append(extra)
    return written


def run(config: RunConfig, stdout=None) -> int:
    """Execute one configured command and write its output; returns the exit status."""
    model = config.model.build()
    handler = _COMMANDS[config.command.name]
    try:
        res = handler(model, config.command, config.output)
    except ParityError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except SumRuleError as exc:
        log.error("%s", exc)
        return EXIT_AUDIT
    except (DiaboloError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("computation failed: %s", exc)
        return EXIT_COMPUTE
    try:
        write_result(res, config.output, stdout)
    except ValueError as exc:
        log.error("could not serialize results: %s", exc)
        return EXIT_COMPUTE
    if res.message:
        log.error("%s", res.message)
    return res.status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="diabolo", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="TOML or JSON run configuration")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="set a dotted config key, e.g. command.r_max=8",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="diabolo: %(levelname)s: %(message)s", stream=sys.stderr)
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        log.error("cannot read %s: %s", path, exc)
        return EXIT_CONFIG
    try:
        config = parse_config(text, args.override, path.suffix.lower())
    except (ConfigError, ParityError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
