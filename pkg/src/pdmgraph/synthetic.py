"""Seeded synthetic telemetry with planted feature clusters and a planted alarm.

Each cluster is driven by a latent AR(1) factor; member signals mix the factor
with independent noise so that within-cluster correlations are close to
``rho``. The driving cluster's factor also undergoes fault episodes (a level
shift of ``shift``). The alarm switches on ``lead`` seconds after an episode
starts and off when it ends, so a label shifted by ``lead`` equals the episode
state at each row.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import SpecError
from .ingest import TimeTable

QUARTILE_EDGES = (-0.6744897501960817, 0.0, 0.6744897501960817)


@dataclass
class SyntheticSpec:
    n_rows: int = 20_000
    clusters: list = field(default_factory=lambda: [[5, 0], [5, 0]])  # [n_continuous, n_categorical] per cluster
    rho: float = 0.9
    phi: float = 0.9
    driving_cluster: int = 0
    shift: float = 5.0
    threshold: float = 2.5
    lead: int = 60
    episode_length: tuple = (300, 600)
    episode_gap: tuple = (600, 1500)
    missing_rate: float = 0.0
    stationary_fraction: float = 0.0
    operating_signals: bool = True
    protocol_column: bool = True
    constant_column: bool = True
    cadence: int = 1
    start: int = 1_700_000_000
    target: str = "alarm"

    def validate(self) -> None:
        span = self.n_rows * self.cadence
        if self.n_rows < 10:
            raise SpecError("n_rows must be at least 10")
        if not self.clusters or any(len(c) != 2 or min(c) < 0 or sum(c) == 0 for c in self.clusters):
            raise SpecError("clusters must be nonempty [n_continuous, n_categorical] pairs")
        if not 0.0 <= self.rho < 1.0:
            raise SpecError(f"rho must be in [0, 1), got {self.rho}")
        if not 0.0 <= self.phi < 1.0:
            raise SpecError(f"phi must be in [0, 1), got {self.phi}")
        if not 0 <= self.driving_cluster < len(self.clusters):
            raise SpecError("driving_cluster out of range")
        if not 0.0 < self.threshold < self.shift:
            raise SpecError("threshold must lie strictly between 0 and shift")
        if self.lead < 1 or self.lead >= span:
            raise SpecError(f"lead must be in [1, {span}) seconds")
        lo, hi = self.episode_length
        if not self.lead < lo <= hi:
            raise SpecError("episodes must outlast the lead time")
        if not 0 < self.episode_gap[0] <= self.episode_gap[1]:
            raise SpecError("episode_gap must be a positive range")
        if not 0.0 <= self.missing_rate < 1.0:
            raise SpecError("missing_rate must be in [0, 1)")
        if not 0.0 <= self.stationary_fraction <= 0.5:
            raise SpecError("stationary_fraction must be in [0, 0.5]")
        if self.stationary_fraction > 0 and not self.operating_signals:
            raise SpecError("stationary periods need the operating signals")
        if self.cadence < 1:
            raise SpecError("cadence must be a positive number of seconds")

    @classmethod
    def from_json(cls, data: dict) -> "SyntheticSpec":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        spec = cls(**known)
        spec.episode_length = tuple(spec.episode_length)
        spec.episode_gap = tuple(spec.episode_gap)
        spec.clusters = [list(c) for c in spec.clusters]
        return spec

    def to_json(self) -> dict:
        d = asdict(self)
        d["episode_length"] = list(self.episode_length)
        d["episode_gap"] = list(self.episode_gap)
        return d


def ar1(n: int, phi: float, rng) -> np.ndarray:
    """Unit-variance stationary AR(1) path."""
    eps = rng.standard_normal(n)
    x0 = rng.standard_normal()
    return lfilter([math.sqrt(1 - phi * phi)], [1.0, -phi], eps, zi=[phi * x0])[0]


def _episodes(n: int, spec: SyntheticSpec, rng) -> list:
    """Episode row ranges [a, b); lengths and gaps are drawn in seconds."""

    def draw(bounds):
        return max(1, int(rng.integers(bounds[0], bounds[1] + 1)) // spec.cadence)

    out = []
    pos = draw(spec.episode_gap)
    while True:
        length = draw(spec.episode_length)
        if pos + length > n:
            break
        out.append((pos, pos + length))
        pos += length + draw(spec.episode_gap)
    return out


def _stationary_blocks(n: int, episodes: list, fraction: float) -> list:
    """One block in the middle of every gap between episodes (and the tails)."""
    if fraction <= 0:
        return []
    edges = [0] + [e for ep in episodes for e in ep] + [n]
    blocks = []
    for a, b in zip(edges[0::2], edges[1::2]):
        size = int((b - a) * fraction)
        if size > 0:
            mid = (a + b) // 2
            blocks.append((mid - size // 2, mid - size // 2 + size))
    return blocks


def generate_synthetic(spec: SyntheticSpec, seed: int):
    """Return (TimeTable, manifest) for ``spec``; deterministic in ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.n_rows
    idx = np.arange(n)
    episodes = _episodes(n, spec, rng)
    in_episode = np.zeros(n, dtype=bool)
    for a, b in episodes:
        in_episode[a:b] = True

    columns, clusters = {}, {}
    for k, (n_cont, n_cat) in enumerate(spec.clusters):
        factor = ar1(n, spec.phi, rng)
        if k == spec.driving_cluster:
            factor = factor + spec.shift * in_episode
        members = {"continuous": [], "categorical": []}
        for j in range(n_cont):
            name = f"cluster{k}_signal{j}"
            mix = math.sqrt(spec.rho) * factor + math.sqrt(1 - spec.rho) * rng.standard_normal(n)
            offset, scale = rng.uniform(-50, 50), rng.uniform(0.5, 20)
            columns[name] = offset + scale * mix
            members["continuous"].append(name)
        for j in range(n_cat):
            name = f"cluster{k}_state{j}"
            mix = math.sqrt(spec.rho) * factor + math.sqrt(1 - spec.rho) * rng.standard_normal(n)
            columns[name] = np.digitize(mix, QUARTILE_EDGES).astype(float)
            members["categorical"].append(name)
        clusters[f"cluster{k}"] = members

    stationary = _stationary_blocks(n, episodes, spec.stationary_fraction)
    if spec.operating_signals:
        moving = np.ones(n, dtype=bool)
        for a, b in stationary:
            moving[a:b] = False
        speed = np.maximum(0.5, 45.0 + 12.0 * ar1(n, 0.98, rng)) * moving
        columns["speed"] = speed
        columns["motor_rpm"] = (32.0 * speed + 40.0 * rng.standard_normal(n)) * moving
    if spec.protocol_column:
        columns["can_checksum"] = rng.integers(0, 256, size=n).astype(float)
    if spec.constant_column:
        columns["firmware_version"] = np.full(n, 3.0)

    if spec.missing_rate > 0:
        for name in list(columns):
            if name == "firmware_version":
                continue
            hole = rng.random(n) < spec.missing_rate
            hole[0] = hole[-1] = False
            columns[name] = np.where(hole, np.nan, columns[name])

    timestamps = spec.start + idx * spec.cadence
    alarm = np.zeros(n)
    for a, b in episodes:
        alarm[(idx < b) & (timestamps >= timestamps[a] + spec.lead)] = 1.0
    columns[spec.target] = alarm

    driving = clusters[f"cluster{spec.driving_cluster}"]
    manifest = {
        "seed": int(seed),
        "spec": spec.to_json(),
        "target": spec.target,
        "clusters": clusters,
        "driving_cluster": f"cluster{spec.driving_cluster}",
        "driving_features": driving["continuous"] + driving["categorical"],
        "episodes": [[int(timestamps[a]), int(spec.start + b * spec.cadence)] for a, b in episodes],
        "crossings": [int(timestamps[a]) for a, _ in episodes],
        "alarm_onsets": [int(timestamps[a] + spec.lead) for a, _ in episodes],
        "stationary_periods": [[int(timestamps[a]), int(spec.start + b * spec.cadence)] for a, b in stationary],
    }
    return TimeTable(timestamps, columns), manifest
