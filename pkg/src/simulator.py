"""
Simulated Noisy Cluster

Deterministic synthetic systems-under-test. A run's workers differ by a baseline
multiplier, draw multiplicative Gaussian noise per trial, and each worker either takes
or avoids the slow path of every planted unstable class. Emitted metrics are a linear
mix of the realized noise factor, the worker baseline and an independent load term,
plus observation noise, so the noise model has something to learn.

performance = f(config) * baseline * delta * (degrade_factor on a bad-bit worker)
delta ~ N(1, sigma^2) clipped to [0.1, 1.9]
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import POOL_SIZE
from .configspace import (ConfigSpace, Configuration, ParameterDef, decode, encode,
                          sample_encoded)
from .errors import DomainError, UsageError, ValidationError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ENVIRONMENTS = ("smooth", "planted-unstable", "learnable-noise")
DELTA_BOUNDS = (0.1, 1.9)
MAX_SIGMA = 0.5
DEPLOYMENT_WORKER_OFFSET = 1000

NOISE_CHANNELS = ("cpu_steal_pct", "io_wait_pct", "cache_miss_rate", "context_switches", "disk_latency_ms")
WORKER_CHANNELS = ("cpu_mhz", "mem_bandwidth_gbps", "numa_remote_pct", "net_rtt_us", "disk_iops")
LOAD_CHANNELS = ("load_avg", "page_faults", "tcp_retransmits", "irq_rate", "swap_used_mb",
                 "open_fds", "gc_pause_ms", "log_bytes", "client_connections", "cpu_temp_c")
METRIC_NAMES = NOISE_CHANNELS + WORKER_CHANNELS + LOAD_CHANNELS


def default_space() -> ConfigSpace:
    """Database-style knob space shared by the built-in environments."""
    return ConfigSpace([
        ParameterDef("shared_buffers_mb", "integer", 64, 8192, log_scale=True, default=128),
        ParameterDef("work_mem_mb", "continuous", 1.0, 1024.0, log_scale=True, default=4.0),
        ParameterDef("random_page_cost", "continuous", 1.0, 8.0, default=4.0),
        ParameterDef("effective_io_concurrency", "integer", 1, 256, default=1),
        ParameterDef("checkpoint_completion_target", "continuous", 0.1, 0.9, default=0.5),
        ParameterDef("enable_bitmapscan", "categorical", choices=("on", "off"), default="on"),
    ])


# ============= TYPES =============

@dataclass(frozen=True)
class RegionPredicate:
    """Box over numeric parameters plus exact matches on categorical ones."""
    bounds: Mapping[str, Tuple[float, float]] = field(default_factory=dict)
    equals: Mapping[str, str] = field(default_factory=dict)

    def matches(self, values: Mapping[str, Any]) -> bool:
        for name, (low, high) in self.bounds.items():
            if not low <= values[name] <= high:
                return False
        return all(values[name] == choice for name, choice in self.equals.items())

    def to_dict(self) -> Dict[str, Any]:
        return {"bounds": {k: list(v) for k, v in self.bounds.items()}, "equals": dict(self.equals)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RegionPredicate":
        bounds = {k: (float(v[0]), float(v[1])) for k, v in (data.get("bounds") or {}).items()}
        return cls(bounds=bounds, equals={k: str(v) for k, v in (data.get("equals") or {}).items()})


@dataclass(frozen=True)
class UnstableRegion:
    class_id: int
    predicate: RegionPredicate
    degrade_factor: float = 0.25
    worker_bad_fraction: float = 0.5
    boost: float = 1.0

    def __post_init__(self):
        if not 0 < self.degrade_factor < 1:
            raise ValidationError(f"degrade_factor must be in (0, 1), got {self.degrade_factor}")
        if not 0 < self.worker_bad_fraction < 1:
            raise ValidationError(f"worker_bad_fraction must be in (0, 1), got {self.worker_bad_fraction}")
        if self.boost <= 0:
            raise ValidationError(f"boost must be positive, got {self.boost}")

    def to_dict(self) -> Dict[str, Any]:
        data = self.predicate.to_dict()
        data.update({"class_id": self.class_id, "degrade_factor": self.degrade_factor,
                     "worker_bad_fraction": self.worker_bad_fraction, "boost": self.boost})
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UnstableRegion":
        return cls(
            class_id=int(data["class_id"]),
            predicate=RegionPredicate.from_dict(data),
            degrade_factor=float(data.get("degrade_factor", 0.25)),
            worker_bad_fraction=float(data.get("worker_bad_fraction", 0.5)),
            boost=float(data.get("boost", 1.0)),
        )


@dataclass
class WorkerProfile:
    worker_id: int
    baseline_multiplier: float = 1.0
    noise_cov: float = 0.0
    metric_mixing: np.ndarray = field(default_factory=lambda: np.zeros((len(METRIC_NAMES), 3)))
    unstable_path_bits: Dict[int, bool] = field(default_factory=dict)
    metric_noise_sd: float = 0.0

    def __post_init__(self):
        if not self.baseline_multiplier > 0:
            raise ValidationError(f"Worker {self.worker_id}: baseline_multiplier must be > 0")
        if not 0 <= self.noise_cov <= MAX_SIGMA:
            raise ValidationError(f"Worker {self.worker_id}: noise_cov must be in [0, {MAX_SIGMA}]")
        self.metric_mixing = np.asarray(self.metric_mixing, dtype=float)

    def is_bad_for(self, class_id: int) -> bool:
        return self.unstable_path_bits.get(class_id, False)


@dataclass(frozen=True)
class WorkerPopulation:
    """Distribution fresh workers are drawn from."""
    baseline_sd: float = 0.0
    sigma_low: float = 0.0
    sigma_high: float = 0.0
    mixing_strength: float = 1.0
    metric_noise_sd: float = 0.05

    def __post_init__(self):
        if not 0 <= self.sigma_low <= self.sigma_high <= MAX_SIGMA:
            raise ValidationError(f"Need 0 <= sigma_low <= sigma_high <= {MAX_SIGMA}")

    def with_sigma(self, sigma: float) -> "WorkerPopulation":
        return replace(self, sigma_low=sigma, sigma_high=sigma)

    def spawn(self, count: int, seed: int, regions: Sequence[UnstableRegion] = (),
              first_id: int = 0) -> List[WorkerProfile]:
        """Draw `count` workers; worker i depends only on (seed, i)."""
        workers = []
        for i in range(count):
            rng = np.random.default_rng(derive_seed(seed, "worker", i))
            baseline = float(np.clip(1.0 + self.baseline_sd * rng.standard_normal(), 0.5, 1.5))
            sigma = float(self.sigma_low + (self.sigma_high - self.sigma_low) * rng.random())
            mixing = np.zeros((len(METRIC_NAMES), 3))
            n_noise, n_worker = len(NOISE_CHANNELS), len(WORKER_CHANNELS)
            mixing[:n_noise, 0] = self.mixing_strength * rng.uniform(0.8, 1.0, n_noise)
            mixing[n_noise:n_noise + n_worker, 1] = rng.uniform(0.5, 1.0, n_worker)
            mixing[n_noise + n_worker:, 2] = rng.uniform(0.05, 0.2, len(LOAD_CHANNELS))
            bits = {r.class_id: bool(rng.random() < r.worker_bad_fraction)
                    for r in sorted(regions, key=lambda r: r.class_id)}
            workers.append(WorkerProfile(
                worker_id=first_id + i,
                baseline_multiplier=baseline,
                noise_cov=sigma,
                metric_mixing=mixing,
                unstable_path_bits=bits,
                metric_noise_sd=self.metric_noise_sd,
            ))
        return workers


@dataclass
class LandscapeSpec:
    """Noise-free performance surface over the encoded space, with planted instability."""
    space: ConfigSpace
    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    interactions: List[Tuple[int, int, float]] = field(default_factory=list)
    regions: List[UnstableRegion] = field(default_factory=list)
    crash_regions: List[RegionPredicate] = field(default_factory=list)
    population: WorkerPopulation = field(default_factory=WorkerPopulation)
    scale: float = 1000.0
    direction: str = "maximize"
    reference_optimum: float = 0.0

    def surface_many(self, U: np.ndarray) -> np.ndarray:
        """f over encoded rows, before region boosts. Bounded in [0.1, 1.5] * scale."""
        U = np.atleast_2d(U)
        bumps = np.exp(-((U - self.centers) ** 2) / (2.0 * self.widths ** 2))
        value = 0.3 + bumps @ self.weights / self.weights.sum()
        for i, j, coef in self.interactions:
            value = value + coef * (U[:, i] - 0.5) * (U[:, j] - 0.5)
        return self.scale * value

    def surface(self, config: Configuration) -> float:
        return float(self.surface_many(encode(self.space, config)[None, :])[0])

    def matching_regions(self, config: Configuration) -> List[UnstableRegion]:
        return [r for r in self.regions if r.predicate.matches(config.values)]

    def crashes(self, config: Configuration) -> bool:
        return any(p.matches(config.values) for p in self.crash_regions)

    def base_performance(self, config: Configuration) -> float:
        """Noise-free performance on a unit-baseline worker that avoids every slow path."""
        value = self.surface(config)
        for region in self.matching_regions(config):
            value = value * region.boost if self.direction == "maximize" else value / region.boost
        return value

    def noise_free(self, profile: WorkerProfile, config: Configuration) -> Optional[float]:
        """Performance with delta = 1 on a given worker; None if the config crashes."""
        if self.crashes(config):
            return None
        value = self.base_performance(config) * profile.baseline_multiplier
        for region in self.matching_regions(config):
            if profile.is_bad_for(region.class_id):
                factor = region.degrade_factor
                value = value * factor if self.direction == "maximize" else value / factor
        return value

    def is_planted(self, config: Configuration) -> bool:
        return bool(self.matching_regions(config))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "space": self.space.to_dict(),
            "scale": self.scale,
            "direction": self.direction,
            "reference_optimum": self.reference_optimum,
            "regions": [r.to_dict() for r in self.regions],
            "crash_regions": [p.to_dict() for p in self.crash_regions],
            "population": {k: getattr(self.population, k) for k in WorkerPopulation.__dataclass_fields__},
        }


@dataclass
class SimOutcome:
    performance: Optional[float]
    metrics: Dict[str, float]
    delta: float
    status: str = "ok"


# ============= NOISE =============

def draw_noise_factors(sigma: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """n multiplicative noise factors, N(1, sigma^2) clipped to [0.1, 1.9]."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    return np.clip(1.0 + sigma * rng.standard_normal(n), *DELTA_BOUNDS)


def inject_noise(performance: float, sigma: float, seed: int) -> float:
    """P * delta; sigma = 0 returns P unchanged."""
    if not performance > 0:
        raise DomainError(f"performance must be > 0, got {performance}")
    delta = draw_noise_factors(sigma, np.random.default_rng(seed), 1)[0]
    return float(performance * delta)


def evaluate_sim(profile: WorkerProfile, landscape: LandscapeSpec, config: Configuration,
                 trial_seed: int) -> SimOutcome:
    """One simulated trial. Pure function of its inputs."""
    rng = np.random.default_rng(trial_seed)
    draws = rng.standard_normal(2 + len(METRIC_NAMES))
    delta = float(np.clip(1.0 + profile.noise_cov * draws[0], *DELTA_BOUNDS))
    load = draws[1]

    noise_free = landscape.noise_free(profile, config)
    if noise_free is None:
        return SimOutcome(performance=None, metrics={}, delta=delta, status="crashed")

    drivers = np.array([delta - 1.0, profile.baseline_multiplier - 1.0, load])
    values = 50.0 + 100.0 * (profile.metric_mixing @ drivers) + profile.metric_noise_sd * draws[2:]
    metrics = {name: float(v) for name, v in zip(METRIC_NAMES, values)}
    return SimOutcome(performance=noise_free * delta, metrics=metrics, delta=delta)


# ============= ENVIRONMENTS =============

def _search_optimum(landscape: LandscapeSpec, seed: int, samples: int = 20000) -> Tuple[Configuration, float]:
    rng = np.random.default_rng(derive_seed(seed, "optimum_search"))
    U = sample_encoded(landscape.space, rng, samples)
    values = landscape.surface_many(U)
    best = int(np.argmax(values)) if landscape.direction == "maximize" else int(np.argmin(values))
    config = decode(landscape.space, U[best])
    return config, landscape.surface(config)


def _plant_regions(landscape: LandscapeSpec, seed: int, count: int,
                   half_width: float = 0.12) -> List[UnstableRegion]:
    """Unstable boxes on two numeric knobs each; class 0 sits on the stable optimum."""
    space = landscape.space
    numeric = [p for p in space if p.kind != "categorical"]
    categorical = [p for p in space if p.kind == "categorical"]
    if len(numeric) < 2:
        raise ValidationError("Planting unstable regions needs at least two numeric parameters")

    rng = np.random.default_rng(derive_seed(seed, "regions"))
    optimum, f_opt = _search_optimum(landscape, seed)
    regions = []
    for class_id in range(count):
        chosen = [numeric[i] for i in sorted(rng.choice(len(numeric), size=2, replace=False))]
        centers = [rng.uniform(0.2, 0.8) for _ in chosen]
        if class_id == 0:
            centers = [p.to_unit(optimum[p.name]) for p in chosen]

        bounds, center_values = {}, dict(optimum.values)
        for p, c in zip(chosen, centers):
            low_u, high_u = max(c - half_width, 0.0), min(c + half_width, 1.0)
            bounds[p.name] = (float(p.from_unit(low_u)), float(p.from_unit(high_u)))
            center_values[p.name] = p.from_unit(c)
        equals = {}
        if class_id == 0 and categorical:
            equals[categorical[0].name] = optimum[categorical[0].name]

        f_center = landscape.surface(space.make_config(center_values))
        boost = min(5.0, max(2.0, 1.8 * f_opt / f_center))
        regions.append(UnstableRegion(class_id, RegionPredicate(bounds, equals), boost=boost))
    return regions


def build_landscape(space: ConfigSpace, seed: int, population: WorkerPopulation,
                    n_regions: int = 0, scale: float = 1000.0) -> LandscapeSpec:
    """Seeded sum of per-dimension Gaussian bumps plus two pairwise interaction terms."""
    rng = np.random.default_rng(derive_seed(seed, "landscape"))
    d = space.encoded_width
    landscape = LandscapeSpec(
        space=space,
        weights=rng.uniform(0.5, 1.5, d),
        centers=rng.uniform(0.15, 0.85, d),
        widths=rng.uniform(0.15, 0.35, d),
        population=population,
        scale=scale,
    )
    if d >= 2:
        pairs = set()
        while len(pairs) < min(2, d * (d - 1) // 2):
            i, j = sorted(int(k) for k in rng.choice(d, size=2, replace=False))
            pairs.add((i, j))
        landscape.interactions = [(i, j, float(rng.uniform(-0.4, 0.4))) for i, j in sorted(pairs)]
    if n_regions:
        landscape.regions = _plant_regions(landscape, seed, n_regions)
    landscape.reference_optimum = _search_optimum(landscape, seed)[1]
    return landscape


def apply_override(landscape: LandscapeSpec, document: Mapping[str, Any]) -> LandscapeSpec:
    """Replace landscape/population fields from a JSON document."""
    updates: Dict[str, Any] = {}
    if "scale" in document:
        updates["scale"] = float(document["scale"])
    if "direction" in document:
        if document["direction"] not in ("maximize", "minimize"):
            raise ValidationError(f"Unknown direction {document['direction']!r}")
        updates["direction"] = document["direction"]
    if "population" in document:
        unknown = set(document["population"]) - set(WorkerPopulation.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"Unknown population fields {sorted(unknown)}")
        updates["population"] = replace(landscape.population, **document["population"])
    if "regions" in document:
        updates["regions"] = [UnstableRegion.from_dict(r) for r in document["regions"]]
    if "crash_regions" in document:
        updates["crash_regions"] = [RegionPredicate.from_dict(p) for p in document["crash_regions"]]
    for key in ("regions", "crash_regions"):
        for entry in updates.get(key, []):
            predicate = entry.predicate if isinstance(entry, UnstableRegion) else entry
            unknown = set(predicate.bounds) | set(predicate.equals)
            unknown -= set(landscape.space.names)
            if unknown:
                raise ValidationError(f"Override {key} refers to unknown parameters {sorted(unknown)}")
    return replace(landscape, **updates)


def make_environment(env_name: str, seed: int, sigma: Optional[float] = None,
                     pool_size: int = POOL_SIZE, override: Optional[Mapping[str, Any]] = None
                     ) -> Tuple[ConfigSpace, LandscapeSpec, List[WorkerProfile]]:
    """
    Build a packaged simulated environment.

    Args:
        env_name: smooth, planted-unstable or learnable-noise
        seed: run seed
        sigma: overrides every worker's noise level
        pool_size: number of tuning workers
        override: JSON document applied on top of the packaged landscape

    Returns:
        (space, landscape, workers)
    """
    if env_name not in ENVIRONMENTS:
        raise UsageError(f"Unknown environment {env_name!r}, expected one of {ENVIRONMENTS}")

    space = default_space()
    if env_name == "smooth":
        population, n_regions = WorkerPopulation(), 0
    elif env_name == "planted-unstable":
        population, n_regions = WorkerPopulation(baseline_sd=0.02, sigma_low=0.02, sigma_high=0.02), 3
    else:
        population = WorkerPopulation(baseline_sd=0.03, sigma_low=0.05, sigma_high=0.1,
                                      mixing_strength=2.0, metric_noise_sd=0.05)
        n_regions = 0
    if sigma is not None:
        population = population.with_sigma(sigma)

    landscape = build_landscape(space, seed, population, n_regions=n_regions)
    if override:
        landscape = apply_override(landscape, override)
        if sigma is not None:
            landscape.population = landscape.population.with_sigma(sigma)

    workers = spawn_workers(landscape, seed, pool_size)
    logger.info(f"  ✓ Environment {env_name}: {len(landscape.regions)} unstable classes, "
                f"{len(workers)} workers, optimum ~{landscape.reference_optimum:.1f}")
    return space, landscape, workers


def spawn_workers(landscape: LandscapeSpec, seed: int, count: int) -> List[WorkerProfile]:
    return landscape.population.spawn(count, derive_seed(seed, "workers"), landscape.regions)


def deployment_workers(landscape: LandscapeSpec, seed: int, count: int = 10) -> List[WorkerProfile]:
    """Fresh workers never used in tuning, drawn from a seed disjoint from the tuning pool's."""
    return landscape.population.spawn(count, derive_seed(seed, "deployment"), landscape.regions,
                                      first_id=DEPLOYMENT_WORKER_OFFSET)
