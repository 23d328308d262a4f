"""Scenario files: JSON documents describing enterprises, buyer agents,
sellers with their listings, and the utilization traces that drive the
buyers' Resource Monitors.

Loading is strict. Unknown fields, dangling ids and invalid weight sets
are rejected eagerly with an error naming the offending agent or field.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MarketError, ParseError, ValidationError
from .model import IssueSpec, Side, Stance, validate_weights
from .tactics import CURVATURE_TOLERANCE, DEFAULT_STANCE_BETA, EPSILON_HEADSTRONG, TacticParams

SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class AgentParams:
    lambda_phi: float = 0.01
    k: float = 0.0
    stance_beta_map: Mapping[Stance, float] = field(default_factory=lambda: dict(DEFAULT_STANCE_BETA))
    epsilon_h: float = EPSILON_HEADSTRONG
    curvature_tolerance: float = CURVATURE_TOLERANCE
    resource_deadline_factor: float = 0.5
    fixed_stance: Stance | None = None

    def tactic(self) -> TacticParams:
        return TacticParams(self.k, self.stance_beta_map[Stance.LINEAR], dict(self.stance_beta_map))


@dataclass(frozen=True)
class TraceSpec:
    kind: str
    value: float = 0.0
    values: tuple[float, ...] = ()
    start: tuple[float, float] = (0.0, 0.0)
    slope: float = 0.0
    noise: float = 0.0


@dataclass(frozen=True)
class BuyerSpec:
    agent_id: str
    enterprise_id: str
    product_id: str
    issues: tuple[IssueSpec, ...]
    triggers: Mapping[str, float]
    traces: Mapping[str, TraceSpec]
    params: AgentParams
    cost_utility_threshold: float = 0.0
    min_reputation: float = 0.0
    target_seller: str | None = None
    ttl: int | None = None
    max_attempts: int = 3


@dataclass(frozen=True)
class ListingSpec:
    ad_id: str
    product_id: str
    issues: tuple[IssueSpec, ...]
    capacity: int = 1
    idle_trigger: float = 0.25
    posted_at: int = 0


@dataclass(frozen=True)
class SellerSpec:
    seller_id: str
    listings: tuple[ListingSpec, ...]
    params: AgentParams
    enterprise_id: str | None = None
    lambda_phi: float = 0.01


@dataclass(frozen=True)
class Scenario:
    seed: int
    ttl: int
    max_ticks: int
    products: Mapping[str, tuple[str, ...]]
    buyers: tuple[BuyerSpec, ...]
    sellers: tuple[SellerSpec, ...]
    name: str = ""

    @property
    def enterprises(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for b in self.buyers:
            out.setdefault(b.enterprise_id, []).append(b.agent_id)
        return out

    def agent_ids(self) -> list[str]:
        return sorted([b.agent_id for b in self.buyers] + [s.seller_id for s in self.sellers])

    def with_seed(self, seed: int) -> Scenario:
        from dataclasses import replace
        return replace(self, seed=seed & SEED_MASK)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def trace_generator(seed: int, agent_id: str) -> np.random.Generator:
    """Counter-based stream keyed by (seed, agent id), independent of the
    order in which agents are scheduled."""
    digest = hashlib.sha256(agent_id.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seed &= SEED_MASK
    entropy = [seed & 0xFFFFFFFF, seed >> 32, *words]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def render_trace(spec: TraceSpec, ticks: int, rng: np.random.Generator) -> list[float]:
    if spec.kind == "constant":
        raw = [spec.value] * ticks
    elif spec.kind == "series":
        vals = list(spec.values)
        raw = [vals[min(t, len(vals) - 1)] for t in range(ticks)]
    else:
        lo, hi = spec.start
        start = float(rng.uniform(lo, hi)) if hi > lo else lo
        noise = rng.normal(0.0, spec.noise, ticks) if spec.noise > 0 else np.zeros(ticks)
        raw = [start + spec.slope * t + float(noise[t]) for t in range(ticks)]
    return [min(1.0, max(0.0, float(v))) for v in raw]


def render_traces(scenario: Scenario, seed: int | None = None) -> dict[str, dict[str, list[float]]]:
    seed = scenario.seed if seed is None else seed
    out = {}
    for buyer in sorted(scenario.buyers, key=lambda b: b.agent_id):
        rng = trace_generator(seed, buyer.agent_id)
        out[buyer.agent_id] = {
            issue_id: render_trace(buyer.traces[issue_id], scenario.max_ticks + 1, rng)
            for issue_id in sorted(buyer.traces)
        }
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Reader:
    """Typed access to one JSON object with a dotted path for messages."""

    def __init__(self, data, path: str) -> None:
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: expected an object")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ValidationError(f"{self.path}.{key}: missing")
            return default
        return self.data[key]

    def num(self, key, default=None, required=False, lo=None, hi=None) -> float:
        v = self._get(key, default, required)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"{self.path}.{key}: expected a number")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValidationError(f"{self.path}.{key}: {v!r} outside [{lo}, {hi}]")
        return float(v)

    def int(self, key, default=None, required=False, lo=None) -> int:
        v = self._get(key, default, required)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"{self.path}.{key}: expected an integer")
        if lo is not None and v < lo:
            raise ValidationError(f"{self.path}.{key}: must be >= {lo}")
        return v

    def str(self, key, default=None, required=False) -> str:
        v = self._get(key, default, required)
        if v is not None and not isinstance(v, str):
            raise ValidationError(f"{self.path}.{key}: expected a string")
        return v

    def list(self, key, required=False) -> list:
        v = self._get(key, [], required)
        if not isinstance(v, list):
            raise ValidationError(f"{self.path}.{key}: expected a list")
        return v

    def obj(self, key, required=False) -> dict:
        v = self._get(key, {}, required)
        if not isinstance(v, dict):
            raise ValidationError(f"{self.path}.{key}: expected an object")
        return v

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ValidationError(f"{self.path}: unknown field(s) {', '.join(extra)}")


def _params(data: Mapping, base: AgentParams, path: str) -> AgentParams:
    r = _Reader(data, path)
    betas = dict(base.stance_beta_map)
    raw = r.obj("stance_beta_map")
    for name, beta in raw.items():
        try:
            stance = Stance(name)
        except ValueError:
            raise ValidationError(f"{path}.stance_beta_map: unknown stance {name!r}") from None
        if isinstance(beta, bool) or not isinstance(beta, (int, float)) or beta <= 0:
            raise ValidationError(f"{path}.stance_beta_map.{name}: must be a positive number")
        betas[stance] = float(beta)
    fixed = r.str("fixed_stance", base.fixed_stance.value if base.fixed_stance else None)
    try:
        fixed_stance = Stance(fixed) if fixed is not None else None
    except ValueError:
        raise ValidationError(f"{path}.fixed_stance: unknown stance {fixed!r}") from None
    out = AgentParams(
        lambda_phi=r.num("lambda_phi", base.lambda_phi, lo=0, hi=1),
        k=r.num("k", base.k, lo=0, hi=1),
        stance_beta_map=betas,
        epsilon_h=r.num("epsilon_h", base.epsilon_h, lo=0),
        curvature_tolerance=r.num("curvature_tolerance", base.curvature_tolerance, lo=0, hi=1),
        resource_deadline_factor=r.num("resource_deadline_factor", base.resource_deadline_factor, lo=0),
        fixed_stance=fixed_stance,
    )
    r.done()
    if out.k >= 1:
        raise ValidationError(f"{path}.k: must be < 1")
    if out.resource_deadline_factor >= 1:
        raise ValidationError(f"{path}.resource_deadline_factor: must be < 1")
    return out


def _issues(items: Sequence, path: str, side: Side, owner: str,
            known: Mapping[str, tuple[str, ...]], product_id: str) -> tuple[tuple[IssueSpec, ...], dict[str, float]]:
    if not items:
        raise ValidationError(f"{owner}: at least one issue is required")
    issues, triggers = [], {}
    for n, item in enumerate(items):
        r = _Reader(item, f"{path}[{n}]")
        issue_id = r.str("issue_id", required=True)
        if issue_id not in known.get(product_id, ()):
            raise ValidationError(f"{owner}: issue {issue_id!r} is not an issue of product {product_id!r}")
        try:
            spec = IssueSpec(
                issue_id=issue_id,
                weight=r.num("weight", required=True),
                ideal_cost=r.num("ideal_cost", required=True),
                reservation_cost=r.num("reservation_cost", required=True),
                t_min=r.int("t_min", 0, lo=0),
                t_max=r.int("t_max", 10, lo=1),
                name=r.str("name", ""),
            )
        except ValueError as exc:
            raise ValidationError(f"{owner}: {exc}") from None
        trig = r.num("trigger", None, lo=0, hi=1)
        r.done()
        if spec.side is not side:
            raise ValidationError(f"{owner}: issue {issue_id!r} oriented for a {spec.side.value}")
        if trig is not None:
            triggers[issue_id] = trig
        issues.append(spec)
    ids = [i.issue_id for i in issues]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{owner}: duplicate issue ids")
    try:
        validate_weights(issues)
    except (MarketError, ValueError) as exc:
        raise ValidationError(f"{owner}: invalid weights ({exc})") from None
    return tuple(issues), triggers


def _trace(data, path: str) -> TraceSpec:
    r = _Reader(data, path)
    kind = r.str("kind", required=True)
    if kind == "constant":
        spec = TraceSpec(kind, value=r.num("value", required=True, lo=0, hi=1))
    elif kind == "series":
        values = r.list("values", required=True)
        if not values or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
            raise ValidationError(f"{path}.values: expected a non-empty list of numbers")
        spec = TraceSpec(kind, values=tuple(float(v) for v in values))
    elif kind == "noisy_ramp":
        start = r._get("start", None, True)
        if isinstance(start, (int, float)) and not isinstance(start, bool):
            lo = hi = float(start)
        elif isinstance(start, list) and len(start) == 2 and all(isinstance(v, (int, float)) for v in start):
            lo, hi = float(start[0]), float(start[1])
        else:
            raise ValidationError(f"{path}.start: expected a number or a [lo, hi] pair")
        if lo > hi:
            raise ValidationError(f"{path}.start: lo > hi")
        spec = TraceSpec(kind, start=(lo, hi), slope=r.num("slope", 0.0),
                         noise=r.num("noise", 0.0, lo=0))
    else:
        raise ValidationError(f"{path}.kind: unknown trace kind {kind!r}")
    r.done()
    return spec


def parse_scenario(data) -> Scenario:
    root = _Reader(data, "scenario")
    seed = root.int("seed", 0)
    ttl = root.int("ttl", 10, lo=1)
    max_ticks = root.int("max_ticks", 100, lo=1)
    name = root.str("name", "")
    defaults = _params(root.obj("defaults"), AgentParams(), "scenario.defaults")

    products: dict[str, tuple[str, ...]] = {}
    for n, item in enumerate(root.list("products", required=True)):
        r = _Reader(item, f"products[{n}]")
        pid = r.str("product_id", required=True)
        ids = r.list("issues", required=True)
        r.done()
        if pid in products:
            raise ValidationError(f"products[{n}]: duplicate product {pid!r}")
        if not ids or not all(isinstance(i, str) for i in ids) or len(set(ids)) != len(ids):
            raise ValidationError(f"products[{n}].issues: expected distinct issue ids")
        products[pid] = tuple(ids)

    seen: set[str] = set()

    def claim(agent_id: str, path: str) -> None:
        if agent_id in seen:
            raise ValidationError(f"{path}: duplicate agent id {agent_id!r}")
        seen.add(agent_id)

    sellers = []
    ad_ids: set[str] = set()
    for n, item in enumerate(root.list("sellers")):
        r = _Reader(item, f"sellers[{n}]")
        sid = r.str("seller_id", required=True)
        claim(sid, f"sellers[{n}]")
        owner = f"seller {sid!r}"
        params = _params(r.obj("params"), defaults, f"sellers[{n}].params")
        listings = []
        for m, li in enumerate(r.list("listings", required=True)):
            lr = _Reader(li, f"sellers[{n}].listings[{m}]")
            ad_id = lr.str("ad_id", required=True)
            if ad_id in ad_ids:
                raise ValidationError(f"{owner}: duplicate ad id {ad_id!r}")
            ad_ids.add(ad_id)
            pid = lr.str("product_id", required=True)
            if pid not in products:
                raise ValidationError(f"{owner}: unknown product {pid!r}")
            issues, _ = _issues(lr.list("issues", required=True), f"{lr.path}.issues",
                                Side.SELLER, owner, products, pid)
            listings.append(ListingSpec(
                ad_id, pid, issues,
                capacity=lr.int("capacity", 1, lo=1),
                idle_trigger=lr.num("idle_trigger", 0.25, lo=0, hi=1),
                posted_at=lr.int("posted_at", 0, lo=0),
            ))
            lr.done()
        enterprise = r.str("enterprise_id", None)
        r.done()
        sellers.append(SellerSpec(sid, tuple(listings), params, enterprise))

    seller_ids = {s.seller_id for s in sellers}
    buyers = []
    for n, ent in enumerate(root.list("enterprises", required=True)):
        er = _Reader(ent, f"enterprises[{n}]")
        eid = er.str("enterprise_id", required=True)
        for m, item in enumerate(er.list("agents", required=True)):
            path = f"enterprises[{n}].agents[{m}]"
            r = _Reader(item, path)
            aid = r.str("agent_id", required=True)
            claim(aid, path)
            owner = f"agent {aid!r}"
            pid = r.str("product_id", required=True)
            if pid not in products:
                raise ValidationError(f"{owner}: unknown product {pid!r}")
            issues, triggers = _issues(r.list("issues", required=True), f"{path}.issues",
                                       Side.BUYER, owner, products, pid)
            raw_traces = r.obj("traces", required=True)
            traces = {}
            for issue in issues:
                if issue.issue_id not in raw_traces:
                    raise ValidationError(f"{owner}: no trace for issue {issue.issue_id!r}")
                traces[issue.issue_id] = _trace(raw_traces[issue.issue_id], f"{path}.traces.{issue.issue_id}")
            extra = set(raw_traces) - set(traces)
            if extra:
                raise ValidationError(f"{owner}: traces for unknown issues {sorted(extra)}")
            target = r.str("target_seller", None)
            if target is not None and target not in seller_ids:
                raise ValidationError(f"{owner}: target_seller {target!r} does not exist")
            agent_ttl = r.int("ttl", None, lo=1)
            buyers.append(BuyerSpec(
                agent_id=aid,
                enterprise_id=eid,
                product_id=pid,
                issues=issues,
                triggers={i.issue_id: triggers.get(i.issue_id, 0.8) for i in issues},
                traces=traces,
                params=_params(r.obj("params"), defaults, f"{path}.params"),
                cost_utility_threshold=r.num("cost_utility_threshold", 0.0, lo=0, hi=1),
                min_reputation=r.num("min_reputation", 0.0, lo=0, hi=1),
                target_seller=target,
                ttl=agent_ttl,
                max_attempts=r.int("max_attempts", 3, lo=1),
            ))
            r.done()
        er.done()
    root.done()
    return Scenario(seed & SEED_MASK, ttl, max_ticks, products, tuple(buyers), tuple(sellers), name)


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return parse_scenario(data)


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file.

    Raises:
        OSError: the file cannot be read.
        ParseError: malformed JSON, with the line number.
        ValidationError: an invariant fails; the message names the agent or field.
    """
    return loads_scenario(Path(path).read_text(encoding="utf-8"))
