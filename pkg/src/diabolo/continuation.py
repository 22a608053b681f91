"""Follow diabolical points while one Hamiltonian parameter changes.

Most steps are warm starts: every point of the previous sample is
extrapolated, polished and its pair index re-measured on a small sphere.
A full search runs every ``full_every`` steps and whenever a warm step loses
or merges points, because newborn points are invisible to warm starts.
Tracks are linked by nearest position; points on the hard axis and off it are
never linked to each other, so a fork shows up as tracks ending and starting
between two samples. Each such change becomes a :class:`BifurcationEvent`
whose parameter interval is narrowed by bisection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NearDegeneracyError, ParityError, SumRuleError
from .search import DiabolicalPointRecord, SearchConfig, _Problem, search
from .spectral import rank_of_label
from .spin import FieldVector, HamiltonianModel, parity_check
from .topology import DiabolicityMultiplet, expected_pair_total, pair_index_on_sphere

log = logging.getLogger(__name__)

ON_AXIS_TO_OFF_AXIS = "on-axis collision -> off-axis pair"
OFF_AXIS_TO_ON_AXIS = "off-axis pair -> on-axis collision"
OTHER = "other"


@dataclass
class SweepSpec:
    """A one-parameter family ``model.with_parameter(parameter, t)``.

    ``max_displacement`` bounds how far a point may move between linked
    samples (default ``0.02`` of the search radius); a larger jump halves the
    step. ``axis_tol`` is the distance from the x axis below which a point
    counts as on-axis (default ``1e-6`` of the search radius).
    """

    model: HamiltonianModel
    parameter: str
    t0: float
    t1: float
    steps: int
    search: SearchConfig = field(default_factory=SearchConfig)
    full_every: int = 10
    max_displacement: Optional[float] = None
    axis_tol: Optional[float] = None
    max_halvings: int = 6
    bisect_rel: float = 1e-3
    sphere_grid: tuple = (24, 24)

    def __post_init__(self):
        if self.t0 == self.t1:
            raise ValueError("t0 and t1 must differ")
        if self.steps < 2:
            raise ValueError("a sweep needs at least 2 steps")
        if self.full_every < 1:
            raise ValueError("full_every must be positive")

    def model_at(self, t: float) -> HamiltonianModel:
        return self.model.with_parameter(self.parameter, float(t))


@dataclass
class Site:
    """One level pair of one record: the unit that tracks follow."""

    pair: float  # upper label mu of the pair (mu, mu - 1)
    position: np.ndarray
    D: int
    record: Optional[DiabolicalPointRecord] = None


@dataclass
class Track:
    track_id: int
    pair: float
    samples: list = field(default_factory=list)  # [(t, Site)]
    status: str = "alive"  # alive | merged | born | ended
    born_event: Optional[int] = None
    merged_event: Optional[int] = None
    on_axis: bool = True  # at the last sample

    def positions(self) -> np.ndarray:
        return np.array([s.position for _, s in self.samples])


@dataclass
class BifurcationEvent:
    event_id: int
    t_interval: tuple
    pair: float
    incoming: list  # track ids ending at the event
    outgoing: list  # track ids starting at it
    kind: str
    center: np.ndarray
    conserved: bool


@dataclass
class Sample:
    t: float
    sites: list
    full: bool
    audit: dict  # pair -> (found total, expected)


@dataclass
class SweepResult:
    tracks: List[Track]
    events: List[BifurcationEvent]
    samples: List[Sample]
    flagged: list  # unbalanced track changes (search failures, not events)


# ---------------------------------------------------------------------------


def _pairs(spec: SweepSpec) -> tuple:
    if spec.search.pairs is not None:
        return tuple(spec.search.pairs)
    j = spec.model.spin.j
    return tuple(j - k for k in range(spec.model.spin.dim - 1))


def _sites_from_records(records, pairs) -> list:
    out = []
    for rec in records:
        for mu in pairs:
            if rec.mu_top >= mu > rec.mu_bottom:
                k = int(round(rec.mu_top - mu))
                D = int(rec.indices.indices[k]) if rec.indices is not None else 0
                out.append(Site(float(mu), rec.position_array(), D, rec))
    return out


def _audit(sites, spin, pairs) -> dict:
    return {mu: (sum(s.D for s in sites if s.pair == mu), expected_pair_total(spin, mu)) for mu in pairs}


def _audit_ok(audit: dict) -> bool:
    return all(a == b for a, b in audit.values())


class _Sweeper:
    def __init__(self, spec: SweepSpec):
        self.spec = spec
        self.pairs = _pairs(spec)
        self.spin = spec.model.spin
        self.radius = None
        self.bound = spec.max_displacement
        self.axis_tol = spec.axis_tol

    # -- sampling ---------------------------------------------------------
    def full(self, t: float) -> list:
        model = self.spec.model_at(t)
        if not parity_check(model):
            raise ParityError(f"model at {self.spec.parameter}={t} has odd terms")
        out = search(model, self.spec.search)
        if self.radius is None:
            self.radius = out.region_radius
            if self.bound is None:
                self.bound = 0.02 * self.radius
            if self.axis_tol is None:
                self.axis_tol = 1e-6 * self.radius
        sites = _sites_from_records(out.records, self.pairs)
        audit = _audit(sites, self.spin, self.pairs)
        if not _audit_ok(audit):
            bad = {mu: v for mu, v in audit.items() if v[0] != v[1]}
            raise SumRuleError(f"index audit failed at {self.spec.parameter}={t}: {bad}")
        return sites

    def warm(self, t_prev: float, t: float, prev: list, older: Optional[list], t_older: Optional[float]):
        """Warm-started sites at ``t``, or None when the step must be redone."""
        model = self.spec.model_at(t)
        problem = _Problem(model, self.spec.search.eps_deg)
        eps_pos = self.spec.search.eps_pos or 1e-6 * self.radius
        out = []
        for idx, s in enumerate(prev):
            x0 = s.position
            if older is not None and t_older is not None and t_older != t_prev:
                # linear predictor from the two previous samples
                x0 = s.position + (s.position - older[idx].position) * (t - t_prev) / (t_prev - t_older)
            r = rank_of_label(self.spin.dim, s.pair)
            res = problem.polish(x0, r, trust=self.bound, fallback=False)
            if not res.converged or np.linalg.norm(res.position - s.position) > self.bound:
                return None
            if self._on_axis(res.position) != self._on_axis(s.position):
                return None
            out.append(Site(s.pair, res.position, s.D))
        # two sites converging onto one point means a collision is near
        for a in range(len(out)):
            for b in range(a + 1, len(out)):
                if out[a].pair == out[b].pair and np.linalg.norm(out[a].position - out[b].position) <= 1e3 * eps_pos:
                    return None
        for s in out:
            others = [o.position for o in out if o is not s]
            nearest = min((np.linalg.norm(p - s.position) for p in others), default=self.radius)
            radius = min(0.4 * nearest, 0.25 * self.bound + 1e-12)
            try:
                D = pair_index_on_sphere(model, s.position, radius, s.pair, grid=self.spec.sphere_grid)
            except NearDegeneracyError:
                return None
            if D != s.D:
                return None
            s.record = _record(model, s)
        return out

    def _on_axis(self, x) -> bool:
        return bool(np.hypot(x[1], x[2]) <= self.axis_tol)

    # -- sweep ------------------------------------------------------------
    def run(self) -> SweepResult:
        spec = self.spec
        ts = np.linspace(spec.t0, spec.t1, spec.steps + 1)
        sites = self.full(ts[0])
        samples = [Sample(float(ts[0]), sites, True, _audit(sites, self.spin, self.pairs))]
        self.samples = samples
        for i in range(1, len(ts)):
            if i % spec.full_every == 0:
                sites = self.full(ts[i])
                samples.append(Sample(float(ts[i]), sites, True, _audit(sites, self.spin, self.pairs)))
                continue
            samples.extend(self._advance(samples, float(ts[i])))
        tracks = self.link(samples)
        events, flagged = self.detect(tracks, samples)
        return SweepResult(tracks, events, samples, flagged)

    def _advance(self, samples, t_target):
        """Warm steps from the last sample to ``t_target``, halving on trouble."""
        new = []
        t_prev = samples[-1].t
        prev = samples[-1].sites
        # warm samples keep the site order of their predecessor; full ones do not
        older = samples[-2].sites if len(samples) > 1 and not samples[-1].full else None
        t_older = samples[-2].t if older is not None else None
        dt = t_target - t_prev
        halvings = 0
        while True:
            t = t_prev + dt
            sites = self.warm(t_prev, t, prev, older, t_older)
            if sites is None and halvings < self.spec.max_halvings:
                dt /= 2
                halvings += 1
                continue
            full = sites is None
            if full:
                # warm starts cannot pass: a full search just beyond the last
                # good sample keeps newborn points next to their origin
                sites = self.full(t)
            new.append(Sample(float(t), sites, full, _audit(sites, self.spin, self.pairs)))
            if abs(t - t_target) <= 1e-12 * max(1.0, abs(t_target)):
                return new
            older, t_older = (None, None) if full else (prev, t_prev)
            prev, t_prev = sites, t
            dt = t_target - t_prev
            halvings = 0

    # -- linking and events -------------------------------------------------
    def link(self, samples) -> List[Track]:
        tracks: List[Track] = []
        current = {}  # site index in previous sample -> track
        for k, sample in enumerate(samples):
            nxt = {}
            if k == 0:
                for i, s in enumerate(sample.sites):
                    tr = Track(len(tracks), s.pair, [(sample.t, s)])
                    tracks.append(tr)
                    nxt[i] = tr
                current = nxt
                continue
            prev = samples[k - 1].sites
            cur = sample.sites
            big = 1e300
            cost = np.full((len(prev), len(cur)), big)
            for a, p in enumerate(prev):
                for b, c in enumerate(cur):
                    if p.pair != c.pair or p.D != c.D or self._on_axis(p.position) != self._on_axis(c.position):
                        continue
                    d = float(np.linalg.norm(p.position - c.position))
                    if d <= self.bound:
                        cost[a, b] = d
            matched = set()
            if len(prev) and len(cur):
                rows, cols = linear_sum_assignment(cost)
                for a, b in zip(rows, cols):
                    if cost[a, b] < big:
                        tr = current[a]
                        tr.samples.append((sample.t, cur[b]))
                        nxt[b] = tr
                        matched.add(a)
            for a in range(len(prev)):
                if a not in matched:
                    current[a].status = "ended"
            for b, s in enumerate(cur):
                if b not in nxt:
                    tr = Track(len(tracks), s.pair, [(sample.t, s)], status="born")
                    tracks.append(tr)
                    nxt[b] = tr
            current = nxt
        for tr in tracks:
            tr.on_axis = self._on_axis(tr.samples[-1][1].position)
        return tracks

    def detect(self, tracks, samples):
        """Group track endings and births into index-conserving events.

        A change is the end of a track (between its last sample and the
        next) or a birth. Changes of one pair in the same sample interval and
        within ``2 * max_displacement`` of each other belong together, and so
        do the birth and end of a short-lived track: a fork may pass through
        an intermediate point of opposite index that lives for a few samples.
        """
        times = [smp.t for smp in samples]
        items = []  # (track, kind, interval index k: change between k-1 and k, position)
        for tr in tracks:
            if tr.samples[0][0] != times[0]:
                items.append((tr, "start", times.index(tr.samples[0][0]), tr.samples[0][1].position))
            if tr.status == "ended":
                items.append((tr, "end", times.index(tr.samples[-1][0]) + 1, tr.samples[-1][1].position))
        parent = list(range(len(items)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        reach = 2 * self.bound
        for a in range(len(items)):
            for b in range(a + 1, len(items)):
                ta, _, ka, xa = items[a]
                tb, _, kb, xb = items[b]
                same_track = ta is tb
                close = ta.pair == tb.pair and ka == kb and np.linalg.norm(xa - xb) <= reach
                if same_track or close:
                    parent[find(a)] = find(b)
        groups = {}
        for a in range(len(items)):
            groups.setdefault(find(a), []).append(items[a])

        events, flagged = [], []
        for group in sorted(groups.values(), key=lambda g: (min(i[2] for i in g), min(i[0].track_id for i in g))):
            ended = {id(i[0]) for i in group if i[1] == "end"}
            started = {id(i[0]) for i in group if i[1] == "start"}
            incoming = [i[0] for i in group if i[1] == "end" and id(i[0]) not in started]
            outgoing = [i[0] for i in group if i[1] == "start" and id(i[0]) not in ended]
            k_lo = min(i[2] for i in group)
            k_hi = max(i[2] for i in group)
            ids = sorted({i[0].track_id for i in group})
            sum_in = sum(tr.samples[-1][1].D for tr in incoming)
            sum_out = sum(tr.samples[0][1].D for tr in outgoing)
            if sum_in != sum_out or not incoming or not outgoing:
                flagged.append((times[k_lo - 1], times[k_hi], ids))
                continue
            axis_in = {self._on_axis(tr.samples[-1][1].position) for tr in incoming}
            axis_out = {self._on_axis(tr.samples[0][1].position) for tr in outgoing}
            if axis_in == {True} and axis_out == {False}:
                kind = ON_AXIS_TO_OFF_AXIS
            elif axis_in == {False} and axis_out == {True}:
                kind = OFF_AXIS_TO_ON_AXIS
            else:
                kind = OTHER
            pts = [tr.samples[-1][1].position for tr in incoming] + [tr.samples[0][1].position for tr in outgoing]
            ev = BifurcationEvent(
                len(events),
                (times[k_lo - 1], times[k_hi]),
                incoming[0].pair,
                [tr.track_id for tr in incoming],
                [tr.track_id for tr in outgoing],
                kind,
                np.mean(pts, axis=0),
                True,
            )
            ev.t_interval = self.bisect(ev, samples[k_lo - 1], samples[k_hi])
            for tr in incoming:
                tr.status = "merged"
                tr.merged_event = ev.event_id
            for i in group:
                if i[1] == "start":
                    i[0].born_event = ev.event_id
                elif id(i[0]) in started:
                    i[0].status = "merged"
                    i[0].merged_event = ev.event_id
            events.append(ev)
        return events, flagged

    def _local_state(self, sites, ev) -> tuple:
        near = [s for s in sites if s.pair == ev.pair and np.linalg.norm(s.position - ev.center) <= 2 * self.bound]
        return tuple(sorted((self._on_axis(s.position), s.D) for s in near))

    def bisect(self, ev, before: Sample, after: Sample) -> tuple:
        """Bracket the event between leaving the old local state and reaching the new one.

        Each bracket end is narrowed by bisection with full searches until
        it is below half of ``bisect_rel`` times the sweep length.
        """
        spec = self.spec
        state_before = self._local_state(before.sites, ev)
        state_after = self._local_state(after.sites, ev)
        width = 0.5 * spec.bisect_rel * abs(spec.t1 - spec.t0)
        cfg = replace(spec.search, pairs=(ev.pair,))
        cache = {}

        def state(t):
            if t not in cache:
                out = search(spec.model_at(t), cfg)
                cache[t] = self._local_state(_sites_from_records(out.records, (ev.pair,)), ev)
            return cache[t]

        def narrow(lo, hi, keep_lo):
            while abs(hi - lo) >= width:
                mid = 0.5 * (lo + hi)
                if keep_lo(state(mid)):
                    lo = mid
                else:
                    hi = mid
            return lo, hi

        depart, _ = narrow(before.t, after.t, lambda st: st == state_before)
        _, arrive = narrow(before.t, after.t, lambda st: st != state_after)
        return tuple(sorted((depart, arrive)))


def _record(model, s: Site) -> DiabolicalPointRecord:
    return DiabolicalPointRecord(
        position=FieldVector.of(s.position),
        span=(s.pair, s.pair - 1),
        order=2,
        indices=DiabolicityMultiplet(s.pair, (s.D,)),
    )


def sweep(spec: SweepSpec) -> SweepResult:
    """Track every point of the configured pairs across ``[t0, t1]``.

    Raises :class:`SumRuleError` naming the parameter value when a full
    search fails its index audit even after escalation.
    """
    sweeper = _Sweeper(spec)
    try:
        return sweeper.run()
    except SumRuleError as err:
        samples = getattr(sweeper, "samples", [])
        # keep what was sampled so far for callers that flush partial output
        err.partial = SweepResult(sweeper.link(samples) if samples else [], [], samples, [])
        raise


def detect_events(result: SweepResult) -> List[BifurcationEvent]:
    return result.events
