"""Writers (MPS, CPLEX-style LP, JSON summary) and an MPS reader.

Full-scale instances are meant to be exported and handed to an industrial
MILP solver; the writers emit deterministic, canonically ordered files so a
rebuild is byte-identical. The reader exists so round trips can be checked
and exported files solved with matrix-interface solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .formulation import EQ, GE, LE, MilpModel

_SENSE_TO_MPS = {LE: "L", GE: "G", EQ: "E"}
_MPS_TO_SENSE = {"L": LE, "G": GE, "E": EQ}


def _fmt(x: float) -> str:
    """Full-precision float literal (re-reads to the identical double)."""
    return repr(float(x))


def write_mps(model: MilpModel, path: str | Path) -> None:
    """Write the model as an MPS file (maximization declared via OBJSENSE).

    Columns are whitespace-aligned; names longer than the classic 8-character
    fields are used deliberately and are accepted by every mainstream reader.
    """
    lines: list[str] = []
    lines.append("NAME          BESSBID")
    lines.append("OBJSENSE")
    lines.append("    MAX")
    lines.append("ROWS")
    lines.append(" N  OBJ")
    row_names = [f"R{i + 1}" for i in range(model.n_constraints)]
    for name, con in zip(row_names, model.constraints):
        lines.append(f" {_SENSE_TO_MPS[con.sense]}  {name}")

    # Entries grouped per column, constraints in row order, objective last.
    per_col: dict[int, list[tuple[str, float]]] = {i: [] for i in range(model.n_variables)}
    for name, con in zip(row_names, model.constraints):
        for col, coef in zip(con.cols, con.coefs):
            per_col[col].append((name, coef))
    for col, coef in model.objective.items():
        per_col[col].append(("OBJ", coef))

    width = max(len(v.name) for v in model.variables) + 2
    rwidth = max(len(n) for n in row_names) + 2
    lines.append("COLUMNS")
    marker_count = 0
    in_integer = False
    for i, var in enumerate(model.variables):
        if var.is_integer != in_integer:
            marker_count += 1
            kind = "'INTORG'" if var.is_integer else "'INTEND'"
            lines.append(f"    MARKER{marker_count:<{width - 6}} 'MARKER'{'':<{rwidth - 8}} {kind}")
            in_integer = var.is_integer
        for row, coef in per_col[i]:
            lines.append(f"    {var.name:<{width}}{row:<{rwidth}}{_fmt(coef)}")
    if in_integer:
        marker_count += 1
        lines.append(f"    MARKER{marker_count:<{width - 6}} 'MARKER'{'':<{rwidth - 8}} 'INTEND'")

    lines.append("RHS")
    for name, con in zip(row_names, model.constraints):
        lines.append(f"    RHS{'':<{width - 3}}{name:<{rwidth}}{_fmt(con.rhs)}")

    lines.append("BOUNDS")
    for var in model.variables:
        if var.is_integer:
            if var.ub == 0.0:
                lines.append(f" FX BND{'':<{width - 3}}{var.name:<{rwidth}}0.0")
            else:
                lines.append(f" BV BND{'':<{width - 3}}{var.name}")
        elif var.lb == -np.inf and var.ub == np.inf:
            lines.append(f" FR BND{'':<{width - 3}}{var.name}")
        elif var.ub != np.inf:
            lines.append(f" UP BND{'':<{width - 3}}{var.name:<{rwidth}}{_fmt(var.ub)}")
    lines.append("ENDATA")
    Path(path).write_text("\n".join(lines) + "\n")


def write_lp(model: MilpModel, path: str | Path) -> None:
    """Write the model in CPLEX-style LP text."""
    def term(coef: float, name: str, first: bool) -> str:
        sign = "-" if coef < 0 else ("" if first else "+")
        return f"{sign} {_fmt(abs(coef))} {name}"

    lines = ["\\ bessbid hourly bidding model", "Maximize"]
    obj_terms = [(col, coef) for col, coef in model.objective.items() if coef != 0.0]
    if obj_terms:
        chunks = [term(coef, model.variables[col].name, i == 0)
                  for i, (col, coef) in enumerate(obj_terms)]
        lines.append(" obj: " + " ".join(chunks))
    else:
        lines.append(" obj: 0 " + model.variables[0].name)
    lines.append("Subject To")
    sense_txt = {LE: "<=", GE: ">=", EQ: "="}
    for i, con in enumerate(model.constraints):
        chunks = [term(coef, model.variables[col].name, j == 0)
                  for j, (col, coef) in enumerate(zip(con.cols, con.coefs))]
        lines.append(f" R{i + 1}: " + " ".join(chunks)
                     + f" {sense_txt[con.sense]} {_fmt(con.rhs)}")
    lines.append("Bounds")
    for var in model.variables:
        if var.is_integer:
            if var.ub == 0.0:
                lines.append(f" {var.name} = 0")
        elif var.lb == -np.inf and var.ub == np.inf:
            lines.append(f" {var.name} free")
        elif var.ub != np.inf:
            lines.append(f" {_fmt(var.lb)} <= {var.name} <= {_fmt(var.ub)}")
    binaries = [v.name for v in model.variables if v.is_integer]
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def export(model: MilpModel, fmt: str, path: str | Path) -> None:
    """Write ``model`` to ``path`` as ``"mps"`` or ``"lp"``."""
    fmt = fmt.lower()
    if fmt == "mps":
        write_mps(model, path)
    elif fmt == "lp":
        write_lp(model, path)
    else:
        raise ValidationError(f"unknown export format {fmt!r}; expected 'mps' or 'lp'")


def write_model_summary(model: MilpModel, path: str | Path) -> None:
    """JSON summary: dimensions, census and the big-M constants used."""
    meta = model.meta
    summary = {
        "dimensions": {k: meta[k] for k in ("S", "H", "T", "M", "step_minutes")},
        "scenario_ids": meta["scenario_ids"],
        "enabled_markets": meta["enabled_markets"],
        "big_m": meta["big_m"],
        "census": model.census(),
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# MPS reading


@dataclass
class ParsedMps:
    """Matrix view of an MPS file, senses kept row-wise."""

    name: str
    maximize: bool
    col_names: list[str]
    row_names: list[str]
    senses: list[str]                 # per row, one of <=, >=, =
    rhs: np.ndarray
    objective: np.ndarray
    entries: list[tuple[int, int, float]] = field(repr=False, default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    integer: np.ndarray | None = None  # bool per column

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def n_cols(self) -> int:
        return len(self.col_names)

    def dense_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_cols))
        for r, c, v in self.entries:
            A[r, c] += v
        return A


def read_mps(path: str | Path) -> ParsedMps:
    """Parse the MPS subset this package writes (plus RANGES, for safety)."""
    path = Path(path)
    name = ""
    maximize = False
    obj_row: str | None = None
    row_index: dict[str, int] = {}
    row_names: list[str] = []
    senses: list[str] = []
    col_index: dict[str, int] = {}
    col_names: list[str] = []
    integer_flags: list[bool] = []
    entries: list[tuple[int, int, float]] = []
    obj_entries: dict[int, float] = {}
    rhs_vals: dict[int, float] = {}
    bounds: list[tuple[str, str, float | None]] = []
    section = None
    in_integer = False
    expect_objsense_value = False

    def column(col_name: str) -> int:
        if col_name not in col_index:
            col_index[col_name] = len(col_names)
            col_names.append(col_name)
            integer_flags.append(in_integer)
        return col_index[col_name]

    with path.open() as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("*"):
                continue
            if not line[0].isspace():
                fields = line.split()
                section = fields[0].upper()
                if section == "NAME" and len(fields) > 1:
                    name = fields[1]
                elif section == "OBJSENSE" and len(fields) > 1:
                    maximize = fields[1].upper().startswith("MAX")
                elif section == "OBJSENSE":
                    expect_objsense_value = True
                elif section == "ENDATA":
                    break
                continue
            fields = line.split()
            if expect_objsense_value:
                maximize = fields[0].upper().startswith("MAX")
                expect_objsense_value = False
                continue
            if section == "ROWS":
                kind, row = fields[0].upper(), fields[1]
                if kind == "N":
                    if obj_row is None:
                        obj_row = row
                    continue
                if kind not in _MPS_TO_SENSE:
                    raise ParseError(f"unknown row type {kind!r}", path=str(path), line=line_no)
                row_index[row] = len(row_names)
                row_names.append(row)
                senses.append(_MPS_TO_SENSE[kind])
            elif section == "COLUMNS":
                if len(fields) >= 3 and fields[1] == "'MARKER'":
                    in_integer = fields[2] == "'INTORG'"
                    continue
                col_name = fields[0]
                pairs = fields[1:]
                if len(pairs) % 2 != 0:
                    raise ParseError("odd COLUMNS entry count", path=str(path), line=line_no)
                c = column(col_name)
                for row, val in zip(pairs[::2], pairs[1::2]):
                    coef = float(val)
                    if row == obj_row:
                        obj_entries[c] = obj_entries.get(c, 0.0) + coef
                    elif row in row_index:
                        entries.append((row_index[row], c, coef))
                    else:
                        raise ParseError(f"unknown row {row!r}", path=str(path), line=line_no)
            elif section == "RHS":
                pairs = fields[1:]
                for row, val in zip(pairs[::2], pairs[1::2]):
                    if row == obj_row:
                        continue
                    if row not in row_index:
                        raise ParseError(f"unknown RHS row {row!r}", path=str(path), line=line_no)
                    rhs_vals[row_index[row]] = float(val)
            elif section == "RANGES":
                raise ParseError("RANGES section is not supported", path=str(path), line=line_no)
            elif section == "BOUNDS":
                kind = fields[0].upper()
                col_name = fields[2]
                val = float(fields[3]) if len(fields) > 3 else None
                bounds.append((kind, col_name, val))
            elif section in ("NAME", "OBJSENSE"):
                continue
            else:
                raise ParseError(f"unexpected section {section!r}", path=str(path), line=line_no)

    n = len(col_names)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    integer = np.array(integer_flags, dtype=bool) if n else np.zeros(0, dtype=bool)
    # MPS convention: integer columns inside INTORG/INTEND default to [0, 1].
    ub[integer] = 1.0
    for kind, col_name, val in bounds:
        if col_name not in col_index:
            raise ValidationError(f"bound on unknown column {col_name!r}")
        c = col_index[col_name]
        if kind == "UP":
            ub[c] = val
        elif kind == "LO":
            lb[c] = val
        elif kind == "FX":
            lb[c] = ub[c] = val
        elif kind == "FR":
            lb[c], ub[c] = -np.inf, np.inf
        elif kind == "MI":
            lb[c] = -np.inf
        elif kind == "PL":
            ub[c] = np.inf
        elif kind == "BV":
            lb[c], ub[c] = 0.0, 1.0
            integer[c] = True
        elif kind in ("UI", "LI"):
            (ub if kind == "UI" else lb)[c] = val
            integer[c] = True
        else:
            raise ValidationError(f"unsupported bound type {kind!r}")

    objective = np.zeros(n)
    for c, v in obj_entries.items():
        objective[c] = v
    rhs = np.array([rhs_vals.get(r, 0.0) for r in range(len(row_names))])
    return ParsedMps(name=name, maximize=maximize, col_names=col_names,
                     row_names=row_names, senses=senses, rhs=rhs,
                     objective=objective, entries=entries, lb=lb, ub=ub,
                     integer=integer)
