"""Scenario configuration: INI text with one section per dataclass below.

Every key is optional; omitted keys take the defaults shown here.  Floats are
serialized with ``repr`` so that ``parse(serialize(c)) == c`` exactly.

Example::

    [scenario]
    kind = study
    seed = 7

    [cover]
    m = 16
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

KINDS = ("study", "nwidth", "homog", "validate", "solve")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSection:
    kind: str = "study"
    seed: int = 7
    workers: int = 1


@dataclass(frozen=True)
class DomainSection:
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0


@dataclass(frozen=True)
class FieldSection:
    kind: str = "holes"              # holes | constant | disks-file
    resolution: int = 128            # coefficient cells per unit length
    count: int = 60
    r_min: float = 0.02
    r_max: float = 0.035
    gap_cells: int = 2               # minimum hole separation in coefficient cells
    margin: float = 0.02             # minimum hole distance to the domain boundary
    matrix: float = 1.0
    disks_file: str = ""


@dataclass(frozen=True)
class CoverSection:
    m: int = 16
    layers: int = 2                  # oversampling layers of coarse cells around omega
    fine: int = 128                  # fine elements per unit length


@dataclass(frozen=True)
class BasisSection:
    family: str = "both"             # polynomial | optimal | both
    k_min: int = 1
    k_max: int = 5
    snapshots: int = 0               # 0: max(3n, n + 10) for the optimal family


@dataclass(frozen=True)
class ProblemSection:
    g: str = "shear"                 # shear: 2(x - xc) - (y - yc); none
    f: str = "none"                  # none | one
    bc: str = "neumann"              # neumann | dirichlet (q = 0 on the boundary)


@dataclass(frozen=True)
class ReferenceSection:
    refine: int = 2
    guard_refine: int = 4
    max_unknowns: int = 2_000_000


@dataclass(frozen=True)
class SolverSection:
    prune: float = 1e-10
    rank_threshold: float = 1e-12


@dataclass(frozen=True)
class NwidthSection:
    r: float = 0.5
    r_star: float = 1.0
    fine: int = 128
    snapshots: int = 24
    n: int = 6
    a11: float = 1.0
    a12: float = 0.0
    a22: float = 1.0


@dataclass(frozen=True)
class HomogSection:
    cell: str = "laminate"           # laminate | checkerboard | constant
    a: float = 1.0
    b: float = 4.0
    cell_n: int = 128
    eps: tuple = field(default=(0.25, 0.125, 0.0625), metadata={"item": float})
    n: int = 4
    r: float = 0.375
    r_star: float = 0.75
    fine: int = 128
    snapshots: str = "full"          # full | polynomial snapshot count


@dataclass(frozen=True)
class ExportSection:
    solution: bool = True
    patches: tuple = field(default=(), metadata={"item": int})


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: ScenarioSection = ScenarioSection()
    domain: DomainSection = DomainSection()
    field: FieldSection = FieldSection()
    cover: CoverSection = CoverSection()
    basis: BasisSection = BasisSection()
    problem: ProblemSection = ProblemSection()
    reference: ReferenceSection = ReferenceSection()
    solver: SolverSection = SolverSection()
    nwidth: NwidthSection = NwidthSection()
    homog: HomogSection = HomogSection()
    export: ExportSection = ExportSection()

    def replace(self, section: str, **values) -> "ScenarioConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


# ----------------------------------------------------------------- parsing

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _convert(raw: str, default, meta, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            item = meta.get("item", str)
            return tuple(item(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return no
    return None


def parse(text: str) -> ScenarioConfig:
    """Parse INI text; errors name the line, section and key."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    base = ScenarioConfig()
    sections = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    out = {}
    for name in cp.sections():
        key = name.strip().lower()
        if key not in sections:
            raise ConfigError(f"line {_line_of(text, key, None)}: unknown section [{name}]")
        default_sec = getattr(base, key)
        fdefs = {f.name: f for f in dataclasses.fields(default_sec)}
        values = {}
        for k, raw in cp.items(name):
            line = _line_of(text, key, k)
            where = f"line {line}: [{key}] {k}"
            if k not in fdefs:
                raise ConfigError(f"{where}: unknown key")
            f = fdefs[k]
            values[k] = _convert(raw, getattr(default_sec, k), f.metadata, where)
        out[key] = dataclasses.replace(default_sec, **values)
    cfg = dataclasses.replace(base, **out)
    problems = check(cfg)
    if problems:
        sec, k, msg = problems[0]
        raise ConfigError(f"line {_line_of(text, sec, k)}: [{sec}] {k}: {msg}")
    return cfg


def serialize(cfg: ScenarioConfig) -> str:
    lines = []
    for sf in dataclasses.fields(cfg):
        sec = getattr(cfg, sf.name)
        lines.append(f"[{sf.name}]")
        for f in dataclasses.fields(sec):
            lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse(fh.read())


# --------------------------------------------------------------- checking

def check(cfg: ScenarioConfig) -> list[tuple[str, str, str]]:
    """All range violations as (section, key, message)."""
    bad = []

    def need(cond, sec, key, msg):
        if not cond:
            bad.append((sec, key, msg))

    s, d, fl, c, b = cfg.scenario, cfg.domain, cfg.field, cfg.cover, cfg.basis
    need(s.kind in KINDS, "scenario", "kind", f"must be one of {', '.join(KINDS)}")
    need(0 <= s.seed < 2 ** 64, "scenario", "seed", "must be an unsigned 64-bit integer")
    need(1 <= s.workers <= 256, "scenario", "workers", "must be in 1..256")
    need(d.x1 > d.x0 and d.y1 > d.y0, "domain", "x1", "empty domain")
    need(fl.kind in ("holes", "constant", "disks-file"), "field", "kind", "must be holes, constant or disks-file")
    need(fl.resolution >= 1, "field", "resolution", "must be >= 1")
    need(fl.count >= 0, "field", "count", "must be >= 0")
    need(0 < fl.r_min <= fl.r_max, "field", "r_min", "need 0 < r_min <= r_max")
    need(fl.gap_cells >= 0, "field", "gap_cells", "must be >= 0")
    need(fl.margin >= 0, "field", "margin", "must be >= 0")
    need(fl.matrix > 0, "field", "matrix", "must be positive")
    need(fl.kind != "disks-file" or fl.disks_file, "field", "disks_file", "required for disks-file fields")
    need(c.m >= 1, "cover", "m", "must be >= 1")
    need(c.layers >= 0, "cover", "layers", "must be >= 0")
    need(c.fine % fl.resolution == 0, "cover", "fine", "must be a multiple of field.resolution")
    need(b.family in ("polynomial", "optimal", "both"), "basis", "family", "must be polynomial, optimal or both")
    need(1 <= b.k_min <= b.k_max <= 40, "basis", "k_min", "need 1 <= k_min <= k_max <= 40")
    need(b.snapshots >= 0, "basis", "snapshots", "must be >= 0")
    need(cfg.problem.g in ("shear", "none"), "problem", "g", "must be shear or none")
    need(cfg.problem.f in ("none", "one"), "problem", "f", "must be none or one")
    need(cfg.problem.bc in ("neumann", "dirichlet"), "problem", "bc", "must be neumann or dirichlet")
    need(cfg.reference.refine >= 2, "reference", "refine", "must be >= 2")
    need(cfg.reference.guard_refine == 0 or cfg.reference.guard_refine > cfg.reference.refine,
         "reference", "guard_refine", "must be 0 (off) or larger than refine")
    need(cfg.reference.max_unknowns >= 1, "reference", "max_unknowns", "must be positive")
    need(0 <= cfg.solver.prune < 1, "solver", "prune", "must be in [0, 1)")
    need(0 <= cfg.solver.rank_threshold < 1, "solver", "rank_threshold", "must be in [0, 1)")
    nw = cfg.nwidth
    need(0 < nw.r < nw.r_star, "nwidth", "r", "need 0 < r < r_star")
    need(nw.fine >= 1, "nwidth", "fine", "must be >= 1")
    need(nw.n >= 1 and nw.snapshots >= nw.n, "nwidth", "snapshots", "need snapshots >= n >= 1")
    need(nw.a11 > 0 and nw.a11 * nw.a22 - nw.a12 ** 2 > 0, "nwidth", "a11", "A0 must be SPD")
    h = cfg.homog
    need(h.cell in ("laminate", "checkerboard", "constant"), "homog", "cell",
         "must be laminate, checkerboard or constant")
    need(h.a > 0 and h.b > 0, "homog", "a", "phase values must be positive")
    need(h.cell_n >= 2 and h.cell_n % 2 == 0, "homog", "cell_n", "must be even and >= 2")
    need(len(h.eps) >= 1 and all(e > 0 and abs(1 / e - round(1 / e)) < 1e-9 for e in h.eps),
         "homog", "eps", "each eps must be 1/l for an integer l")
    need(h.n >= 1, "homog", "n", "must be >= 1")
    need(0 < h.r < h.r_star, "homog", "r", "need 0 < r < r_star")
    need(h.snapshots == "full" or h.snapshots.isdigit(), "homog", "snapshots", "must be full or an integer")
    need(all(p >= 0 for p in cfg.export.patches), "export", "patches", "patch indices must be >= 0")
    return bad
