"""Parametric DC optimal power flow in PTDF form.

    min  c'pg
    s.t. e'pg = e'pd
         pf = PTDF (G pg - pd)
         pg_min <= pg <= pg_max,  -rate <= pf <= rate

Demands ``pd`` are the varying parameters. Only the right-hand side of the
standard-form LP depends on them, so a whole dataset shares one matrix.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import deque
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from dualprox.lp_core import ParametricLpInstance


class CaseParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedModelError(ValueError):
    """The case uses a cost model the LP formulation cannot represent."""


class NetworkValidationError(ValueError):
    pass


class GenerationError(RuntimeError):
    """Demand sampling cannot meet the capacity condition."""


@dataclass(frozen=True)
class Bus:
    id: int
    pd: float  # MW
    ref: bool = False


@dataclass(frozen=True)
class Generator:
    bus: int
    cost: float  # $/MW
    pmin: float
    pmax: float


@dataclass(frozen=True)
class Branch:
    f_bus: int
    t_bus: int
    susceptance: float  # p.u.
    fmin: float
    fmax: float


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple
    generators: tuple
    branches: tuple
    slack: int
    base_mva: float = 100.0

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkValidationError("duplicate bus ids")
        known = set(ids)
        if self.slack not in known:
            raise NetworkValidationError(f"slack bus {self.slack} is not a bus")
        if not self.generators:
            raise NetworkValidationError("network has no in-service generator")
        for g in self.generators:
            if g.bus not in known:
                raise NetworkValidationError(f"generator at unknown bus {g.bus}")
            if not g.pmin < g.pmax:
                raise NetworkValidationError(f"generator at bus {g.bus} has pmin >= pmax")
        for k, br in enumerate(self.branches):
            if br.f_bus not in known or br.t_bus not in known:
                raise NetworkValidationError(f"branch {k} references an unknown bus")
            if not br.fmin < br.fmax:
                raise NetworkValidationError(f"branch {k} has fmin >= fmax")
            if not br.susceptance > 0:
                raise NetworkValidationError(f"branch {k} has non-positive susceptance")
        if not is_connected(self):
            raise NetworkValidationError("network is not connected")

    @property
    def bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def base_demand(self) -> np.ndarray:
        return np.array([b.pd for b in self.buses], dtype=np.float64)

    @property
    def capacity(self) -> float:
        return float(sum(g.pmax for g in self.generators))

    def gen_incidence(self) -> np.ndarray:
        """Bus-by-generator 0/1 matrix ``G``."""
        idx = self.bus_index
        G = np.zeros((len(self.buses), len(self.generators)))
        for k, g in enumerate(self.generators):
            G[idx[g.bus], k] = 1.0
        return G

    def to_dict(self) -> dict:
        return {
            "base_mva": self.base_mva,
            "slack": self.slack,
            "buses": [asdict(b) for b in self.buses],
            "generators": [asdict(g) for g in self.generators],
            "branches": [asdict(br) for br in self.branches],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PowerNetwork":
        return cls(
            buses=tuple(Bus(**b) for b in d["buses"]),
            generators=tuple(Generator(**g) for g in d["generators"]),
            branches=tuple(Branch(**br) for br in d["branches"]),
            slack=d["slack"],
            base_mva=d.get("base_mva", 100.0),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def is_connected(net: PowerNetwork) -> bool:
    adj = {b.id: [] for b in net.buses}
    for br in net.branches:
        adj[br.f_bus].append(br.t_bus)
        adj[br.t_bus].append(br.f_bus)
    start = net.buses[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(net.buses)


# MATPOWER column indices (0-based).
BUS_I, BUS_TYPE, PD = 0, 1, 2
GEN_BUS, PMAX, PMIN, GEN_STATUS = 0, 8, 9, 7
F_BUS, T_BUS, BR_X, RATE_A, TAP, BR_STATUS = 0, 1, 3, 5, 8, 10
REF = 3

_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(name: str, body: str, first_line: int) -> np.ndarray:
    rows = []
    width = None
    for offset, raw in enumerate(body.split("\n")):
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                row = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError as exc:
                raise CaseParseError(f"bad number in mpc.{name}: {exc}", first_line + offset) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CaseParseError(
                    f"mpc.{name} row has {len(row)} columns, expected {width}", first_line + offset
                )
            rows.append(row)
    if not rows:
        raise CaseParseError(f"mpc.{name} is empty", first_line)
    return np.array(rows)


def read_matpower_tables(text: str) -> tuple[dict, dict]:
    clean = _strip_comments(text)
    tables = {}
    for match in _BLOCK.finditer(clean):
        line = clean.count("\n", 0, match.start(2)) + 1
        tables[match.group(1)] = _parse_matrix(match.group(1), match.group(2), line)
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR.finditer(clean)}
    return tables, scalars


def parse_matpower_case(text: str, unlimited_factor: float = 2.0) -> PowerNetwork:
    """Build a network from MATPOWER case text.

    Out-of-service generators and branches are dropped. Branches with
    ``rateA == 0`` (unlimited in MATPOWER) get the finite limit
    ``unlimited_factor * (total capacity + total base demand)``, which no DC
    flow can reach.
    """
    tables, scalars = read_matpower_tables(text)
    for name in ("bus", "gen", "branch", "gencost"):
        if name not in tables:
            raise CaseParseError(f"missing table mpc.{name}")
    bus, gen, branch, gencost = (tables[k] for k in ("bus", "gen", "branch", "gencost"))
    if bus.shape[1] < 3 or gen.shape[1] < 10 or branch.shape[1] < 11 or gencost.shape[1] < 5:
        raise CaseParseError("a table has too few columns for the MATPOWER format")
    if gencost.shape[0] < gen.shape[0]:
        raise CaseParseError("mpc.gencost has fewer rows than mpc.gen")
    base_mva = scalars.get("baseMVA", 100.0)

    buses = tuple(
        Bus(int(r[BUS_I]), float(r[PD]), bool(int(r[BUS_TYPE]) == REF)) for r in bus
    )
    generators = []
    for r, cost_row in zip(gen, gencost):
        if int(r[GEN_STATUS]) <= 0:
            continue
        model = int(cost_row[0])
        ncost = int(cost_row[3])
        if model != 2:
            raise UnsupportedModelError(f"gencost model {model} is not supported (need polynomial, model 2)")
        coeffs = cost_row[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise CaseParseError("gencost row shorter than its declared ncost")
        if ncost > 2 and np.any(coeffs[: ncost - 2] != 0.0):
            raise UnsupportedModelError(
                f"generator at bus {int(r[GEN_BUS])} has a nonlinear cost; only linear costs fit an LP"
            )
        linear = float(coeffs[-2]) if ncost >= 2 else 0.0
        generators.append(Generator(int(r[GEN_BUS]), linear, float(r[PMIN]), float(r[PMAX])))

    live = [r for r in branch if int(r[BR_STATUS]) > 0]
    big = unlimited_factor * (
        sum(g.pmax for g in generators) + sum(abs(b.pd) for b in buses)
    )
    branches = []
    for r in live:
        tap = r[TAP] if r[TAP] != 0 else 1.0
        rate = r[RATE_A] if r[RATE_A] > 0 else big
        branches.append(Branch(int(r[F_BUS]), int(r[T_BUS]), 1.0 / (r[BR_X] * tap), -rate, rate))

    refs = [b.id for b in buses if b.ref]
    if refs:
        slack = refs[0]
    else:
        cap = {}
        for g in generators:
            cap[g.bus] = cap.get(g.bus, 0.0) + g.pmax
        slack = max(cap, key=lambda k: (cap[k], -k))
    return PowerNetwork(tuple(buses), tuple(generators), tuple(branches), slack, base_mva)


def load_case(name_or_path) -> PowerNetwork:
    """Load a bundled case (``case3``, ``case6``, ``case14``) or a MATPOWER file path."""
    path = Path(name_or_path)
    if path.exists():
        return parse_matpower_case(path.read_text())
    name = str(name_or_path)
    if not name.endswith(".m"):
        name += ".m"
    text = resources.files("dualprox.cases").joinpath(name).read_text()
    return parse_matpower_case(text)


def compute_ptdf(net: PowerNetwork) -> np.ndarray:
    """Branch-by-bus PTDF with a zero slack column."""
    idx = net.bus_index
    nb, nl = len(net.buses), len(net.branches)
    Bbus = np.zeros((nb, nb))
    Bf = np.zeros((nl, nb))
    for k, br in enumerate(net.branches):
        i, j = idx[br.f_bus], idx[br.t_bus]
        s = br.susceptance
        Bbus[i, i] += s
        Bbus[j, j] += s
        Bbus[i, j] -= s
        Bbus[j, i] -= s
        Bf[k, i] = s
        Bf[k, j] = -s
    keep = np.array([i for i in range(nb) if i != idx[net.slack]])
    ptdf = np.zeros((nl, nb))
    if keep.size:
        Bred = Bbus[np.ix_(keep, keep)]
        try:
            ptdf[:, keep] = np.linalg.solve(Bred.T, Bf[:, keep].T).T
        except np.linalg.LinAlgError:
            raise NetworkValidationError("reduced susceptance matrix is singular (network disconnected?)") from None
    return ptdf


@dataclass(frozen=True)
class DemandSample:
    beta: np.ndarray
    sample_id: int
    seed: int
    alpha: float


def sample_demand(
    net: PowerNetwork,
    rng_seed,
    global_range=(0.8, 1.2),
    local_noise: float = 0.05,
    sample_id: int = 0,
    max_tries: int = 100,
) -> DemandSample:
    """``pd = base * alpha * eta`` with a shared ``alpha ~ U(global_range)`` and
    per-bus ``eta ~ U(1 - local_noise, 1 + local_noise)``.

    ``alpha`` is redrawn while total demand exceeds 95% of generation capacity.
    """
    rng = np.random.default_rng(rng_seed)
    base = net.base_demand
    lo, hi = global_range
    eta = rng.uniform(1.0 - local_noise, 1.0 + local_noise, size=base.size)
    limit = 0.95 * net.capacity
    for _ in range(max_tries):
        alpha = float(rng.uniform(lo, hi))
        beta = base * alpha * eta
        if beta.sum() <= limit:
            return DemandSample(np.maximum(beta, 0.0), sample_id, _seed_int(rng_seed), alpha)
    raise GenerationError(f"could not sample a demand within 95% of capacity ({limit:.1f} MW) in {max_tries} tries")


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed)


@dataclass(frozen=True)
class VariableMap:
    """Which standard-form column is which physical quantity."""

    n_gen: int
    n_branch: int
    gen_buses: tuple
    branch_ends: tuple
    balance_row: int = 0

    @property
    def pg(self) -> slice:
        return slice(0, self.n_gen)

    @property
    def pf(self) -> slice:
        return slice(self.n_gen, self.n_gen + self.n_branch)

    @property
    def flow_rows(self) -> slice:
        return slice(1, 1 + self.n_branch)


@dataclass(frozen=True, eq=False)
class DcopfTemplate:
    """Fixed part of the standard form; ``instance(pd)`` fills in the right-hand side."""

    net: PowerNetwork
    ptdf: np.ndarray
    base: ParametricLpInstance
    varmap: VariableMap

    def rhs(self, pd) -> np.ndarray:
        pd = np.asarray(pd, dtype=np.float64)
        return np.concatenate([pd.sum(axis=-1, keepdims=True), -pd @ self.ptdf.T], axis=-1)

    def instance(self, pd) -> ParametricLpInstance:
        """One instance for a demand vector, or a batched family for a matrix of demands."""
        return self.base.with_rhs(self.rhs(pd))


def build_template(net: PowerNetwork) -> DcopfTemplate:
    ptdf = compute_ptdf(net)
    ng, nl = len(net.generators), len(net.branches)
    G = net.gen_incidence()
    A = np.zeros((1 + nl, ng + nl))
    A[0, :ng] = 1.0
    A[1:, :ng] = -ptdf @ G
    A[1:, ng:] = np.eye(nl)
    c = np.concatenate([[g.cost for g in net.generators], np.zeros(nl)])
    l = np.concatenate([[g.pmin for g in net.generators], [br.fmin for br in net.branches]])
    u = np.concatenate([[g.pmax for g in net.generators], [br.fmax for br in net.branches]])
    base = ParametricLpInstance(A, np.zeros(1 + nl), c, l, u)
    varmap = VariableMap(
        ng, nl, tuple(g.bus for g in net.generators), tuple((br.f_bus, br.t_bus) for br in net.branches)
    )
    return DcopfTemplate(net, ptdf, base, varmap)


def to_standard_form(net: PowerNetwork, sample: DemandSample, template: DcopfTemplate | None = None):
    """Standard-form instance and variable map for one demand sample."""
    template = template or build_template(net)
    return template.instance(sample.beta), template.varmap
