"""Synthetic defendant pools sampled from a causal graph of categorical features.

Root nodes (race, age group, gender) are sampled first, then descendants in
topological order. The primary slot is drawn from the schedule-preference
table; the second and third choices sit one hour before and after it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from fairsched.core import (
    DEFAULT_SLOT_LABELS,
    ROW_SUM_TOL,
    ConfigurationError,
    DataError,
    GroupPartition,
    InvalidInputError,
    SlotGrid,
)

FORMAT_VERSION = 1

FEATURES = (
    "race", "age_group", "gender", "transportation",
    "employment", "work_hour", "num_children", "childcare",
)
CATEGORIES = {
    "race": ("White", "NonWhite"),
    "age_group": ("Below18", "18-54", "Above55"),
    "gender": ("Male", "Female"),
    "transportation": ("Public", "Private"),
    "employment": ("Employed", "Unemployed"),
    "work_hour": ("DayShift", "NightShift", "IrregularShift", "NoShift"),
    "num_children": ("NoChild", "OnePlus"),
    "childcare": ("NoObligation", "HaveObligation"),
}
COL = {name: k for k, name in enumerate(FEATURES)}

PARTITION_ATTRIBUTES = {
    "individual": None,
    "employment": "employment",
    "transportation": "transportation",
    "work_hours": "work_hour",
}

DEFAULT_CHOICE_WEIGHTS = (0.6, 0.3, 0.1)


@dataclass(frozen=True)
class DefendantFeatures:
    race: int
    age_group: int
    gender: int
    transportation: int
    employment: int
    work_hour: int
    num_children: int
    childcare: int

    def __post_init__(self):
        for name in FEATURES:
            code = getattr(self, name)
            if not 0 <= code < len(CATEGORIES[name]):
                raise InvalidInputError(f"{name} code {code} outside {CATEGORIES[name]}")
        if self.employment == 1 and self.work_hour != 3:
            raise InvalidInputError("unemployed defendants must have work_hour = NoShift")

    @classmethod
    def from_codes(cls, codes) -> "DefendantFeatures":
        return cls(*(int(c) for c in codes))

    def codes(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in FEATURES)

    def labels(self) -> dict[str, str]:
        return {name: CATEGORIES[name][getattr(self, name)] for name in FEATURES}


def _primary_table(public_irregular_as: str, noshift_as: str) -> np.ndarray:
    """Primary-slot distribution over the 12 default slots, indexed [transport, work_hour, childcare]."""
    morning = np.r_[np.full(6, 1 / 6), np.zeros(6)]
    late_morning = np.r_[np.zeros(3), np.full(3, 1 / 3), np.zeros(6)]
    early_morning = np.r_[np.full(4, 1 / 4), np.zeros(8)]
    late_afternoon = np.r_[np.zeros(9), np.full(3, 1 / 3)]
    shifts = CATEGORIES["work_hour"]
    alias = {
        0: {"IrregularShift": public_irregular_as, "NoShift": noshift_as},
        1: {"NoShift": noshift_as},
    }
    table = np.zeros((2, 4, 2, 12))
    for transport in range(2):
        for shift in shifts:
            resolved = alias[transport].get(shift, shift)
            if resolved not in shifts or resolved == "NoShift":
                raise ConfigurationError(f"cannot alias {shift} to {resolved}")
            for care in range(2):
                if transport == 0:
                    row = late_morning if resolved == "NightShift" else morning
                elif resolved == "DayShift":
                    row = morning if care == 1 else late_afternoon
                else:
                    row = early_morning
                table[transport, shifts.index(shift), care] = row
    return table


@dataclass(frozen=True)
class CptSet:
    """The nine conditional probability tables of the causal graph.

    Arrays are indexed by parent codes first and child code last. The primary
    slot table is defined over the 12 default slots.
    """

    race: np.ndarray
    age_group: np.ndarray
    gender: np.ndarray
    transportation: np.ndarray  # [race, transport]
    employment: np.ndarray  # [race, employment]
    work_hour: np.ndarray  # [employment, work_hour]
    num_children: np.ndarray  # [age_group, children]
    childcare: np.ndarray  # [gender, children, childcare]
    primary_slot: np.ndarray  # [transport, work_hour, childcare, slot]
    public_irregular_as: str = "DayShift"
    noshift_as: str = "DayShift"

    TABLES = (
        "race", "age_group", "gender", "transportation", "employment",
        "work_hour", "num_children", "childcare", "primary_slot",
    )

    def __post_init__(self):
        for name in self.TABLES:
            t = np.asarray(getattr(self, name), dtype=float)
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise ConfigurationError(f"{name}: probabilities must be finite and nonnegative")
            sums = t.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
                raise ConfigurationError(f"{name}: a conditioning context does not sum to 1")
            object.__setattr__(self, name, t)
        expected = {
            "race": (2,), "age_group": (3,), "gender": (2,), "transportation": (2, 2),
            "employment": (2, 2), "work_hour": (2, 4), "num_children": (3, 2),
            "childcare": (2, 2, 2), "primary_slot": (2, 4, 2, 12),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {getattr(self, name).shape}")

    def as_maps(self) -> dict:
        """Nested category -> probability maps, for reports and metadata."""

        def nest(table, parents, child):
            if not parents:
                return {c: float(p) for c, p in zip(CATEGORIES.get(child, DEFAULT_SLOT_LABELS), table)}
            return {c: nest(table[k], parents[1:], child) for k, c in enumerate(CATEGORIES[parents[0]])}

        return {
            "race": nest(self.race, [], "race"),
            "age_group": nest(self.age_group, [], "age_group"),
            "gender": nest(self.gender, [], "gender"),
            "transportation|race": nest(self.transportation, ["race"], "transportation"),
            "employment|race": nest(self.employment, ["race"], "employment"),
            "work_hour|employment": nest(self.work_hour, ["employment"], "work_hour"),
            "num_children|age_group": nest(self.num_children, ["age_group"], "num_children"),
            "childcare|gender,num_children": nest(self.childcare, ["gender", "num_children"], "childcare"),
            "primary_slot|transportation,work_hour,childcare": nest(
                self.primary_slot, ["transportation", "work_hour", "childcare"], "primary_slot"),
            "aliases": {"public_irregular_as": self.public_irregular_as, "noshift_as": self.noshift_as},
        }


def default_cpts(public_irregular_as: str = "DayShift", noshift_as: str = "DayShift") -> CptSet:
    return CptSet(
        race=np.array([0.5, 0.5]),
        age_group=np.array([0.05, 0.8, 0.15]),
        gender=np.array([0.45, 0.55]),
        transportation=np.array([[0.8, 0.2], [0.6, 0.4]]),
        employment=np.array([[0.8, 0.2], [0.7, 0.3]]),
        work_hour=np.array([[0.5, 0.3, 0.18, 0.02], [0.0, 0.0, 0.0, 1.0]]),
        num_children=np.array([[0.95, 0.05], [0.55, 0.45], [0.2, 0.8]]),
        childcare=np.array([[[1.0, 0.0], [0.85, 0.15]], [[1.0, 0.0], [0.3, 0.7]]]),
        primary_slot=_primary_table(public_irregular_as, noshift_as),
        public_irregular_as=public_irregular_as,
        noshift_as=noshift_as,
    )


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(probs.shape[0])
    return np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def sample_feature_codes(cpts: CptSet, rng: np.random.Generator, size: int,
                         fixed: dict[str, int] | None = None) -> np.ndarray:
    """Ancestral sampling of ``size`` defendants; returns an int array of shape ``(size, 8)``.

    ``fixed`` clamps nodes to given codes (an intervention); their descendants
    are still sampled from the tables.
    """
    fixed = dict(fixed or {})
    for name, code in fixed.items():
        if name not in COL or not 0 <= code < len(CATEGORIES[name]):
            raise InvalidInputError(f"cannot fix {name}={code}")
    x = np.zeros((size, len(FEATURES)), dtype=np.int64)

    def draw(name, probs):
        x[:, COL[name]] = fixed[name] if name in fixed else _categorical(probs, rng)

    draw("race", np.broadcast_to(cpts.race, (size, 2)))
    draw("age_group", np.broadcast_to(cpts.age_group, (size, 3)))
    draw("gender", np.broadcast_to(cpts.gender, (size, 2)))
    draw("transportation", cpts.transportation[x[:, COL["race"]]])
    draw("employment", cpts.employment[x[:, COL["race"]]])
    draw("work_hour", cpts.work_hour[x[:, COL["employment"]]])
    draw("num_children", cpts.num_children[x[:, COL["age_group"]]])
    draw("childcare", cpts.childcare[x[:, COL["gender"]], x[:, COL["num_children"]]])
    return x


def sample_defendant(cpts: CptSet, rng: np.random.Generator,
                     fixed: dict[str, int] | None = None) -> DefendantFeatures:
    if not isinstance(cpts, CptSet):
        raise ConfigurationError("expected a CptSet")
    return DefendantFeatures.from_codes(sample_feature_codes(cpts, rng, 1, fixed)[0])


def _nearest(minutes: np.ndarray, candidates, target: float) -> int:
    return min(candidates, key=lambda j: (abs(minutes[j] - target), j))


def slot_distribution(cpts: CptSet, grid: SlotGrid) -> np.ndarray:
    """Primary-slot table mapped onto ``grid``; shape ``(2, 4, 2, grid.n)``.

    Each default slot sends its mass to the nearest-in-time slot of the same
    block of ``grid``.
    """
    default_minutes = SlotGrid().minutes
    minutes = grid.minutes
    blocks = [list(range(grid.block_boundary)), list(range(grid.block_boundary, grid.n))]
    mapping = np.zeros((12, grid.n))
    for c in range(12):
        block = blocks[0 if c < 6 else 1] or list(range(grid.n))
        mapping[c, _nearest(minutes, block, default_minutes[c])] = 1.0
    return cpts.primary_slot @ mapping


def choice_slots(primary: int, grid: SlotGrid) -> tuple[int, int, int]:
    """Primary slot plus the slots nearest one hour before and one hour after it.

    Choices stay inside the primary's block; a collision moves to the nearest
    free slot of the block (lower index first).
    """
    block = list(grid.block_of(primary))
    if len(block) < 3:
        block = list(range(grid.n))
    minutes = grid.minutes
    chosen = [primary]
    for offset in (-60, 60):
        slot = _nearest(minutes, block, minutes[primary] + offset)
        if slot in chosen:
            free = [j for j in block if j not in chosen]
            slot = min(free, key=lambda j: (abs(j - slot), j))
        chosen.append(slot)
    return tuple(chosen)


def preference_templates(grid: SlotGrid, weights=DEFAULT_CHOICE_WEIGHTS) -> np.ndarray:
    """Row ``p`` is the preference row of a defendant whose primary slot is ``p``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (3,) or np.any(w <= 0):
        raise InvalidInputError("choice weights must be three positive numbers")
    w = w / w.sum()
    rows = np.zeros((grid.n, grid.n))
    for p in range(grid.n):
        for slot, weight in zip(choice_slots(p, grid), w):
            rows[p, slot] += weight
    return rows


def preference_row(features: DefendantFeatures, grid: SlotGrid, cpts: CptSet,
                   weights, rng: np.random.Generator) -> np.ndarray:
    probs = slot_distribution(cpts, grid)[features.transportation, features.work_hour, features.childcare]
    if probs.sum() <= 0:
        raise ConfigurationError(f"no slot has positive probability for {features.labels()}")
    primary = int(_categorical(probs, rng)[0])
    return preference_templates(grid, weights)[primary]


@dataclass(frozen=True)
class GenConfig:
    num_pools: int = 250
    pool_size: int = 12
    seed: int = 0
    choice_weights: tuple[float, float, float] = DEFAULT_CHOICE_WEIGHTS
    partition_attribute: str = "individual"
    stream: int = 0  # 0 for training data, 1 for the test split

    def __post_init__(self):
        if self.num_pools < 1:
            raise InvalidInputError("num_pools must be at least 1")
        if self.partition_attribute not in PARTITION_ATTRIBUTES:
            raise InvalidInputError(f"unknown partition attribute {self.partition_attribute!r}")
        if len(self.choice_weights) != 3 or any(w <= 0 for w in self.choice_weights):
            raise InvalidInputError("choice_weights must be three positive numbers")
        SlotGrid.for_size(self.pool_size)


@dataclass
class Pool:
    features: np.ndarray  # (n, 8) category codes
    groups: np.ndarray  # (n,) raw group ids
    prefs: np.ndarray  # (n, n) row-stochastic

    @property
    def partition(self) -> GroupPartition:
        return GroupPartition.from_labels(self.groups)


@dataclass
class Dataset:
    pools: list[Pool]
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pools)

    @property
    def n(self) -> int:
        return self.pools[0].prefs.shape[0]

    def regroup(self, partition_attribute: str) -> "Dataset":
        """Same pools with group labels recomputed for another protected attribute."""
        pools = [Pool(p.features, group_labels(p.features, partition_attribute), p.prefs) for p in self.pools]
        return Dataset(pools, {**self.metadata, "partition_attribute": partition_attribute})

    def subset(self, indices) -> "Dataset":
        return Dataset([self.pools[i] for i in indices], dict(self.metadata))


def group_labels(features: np.ndarray, partition_attribute: str) -> np.ndarray:
    if partition_attribute not in PARTITION_ATTRIBUTES:
        raise InvalidInputError(f"unknown partition attribute {partition_attribute!r}")
    name = PARTITION_ATTRIBUTES[partition_attribute]
    if name is None:
        return np.arange(features.shape[0])
    return features[:, COL[name]].copy()


def generate_dataset(cfg: GenConfig, cpts: CptSet | None = None) -> Dataset:
    """``cfg.num_pools`` pools; pool ``p`` draws from the stream ``(seed, stream, p)``."""
    cpts = cpts or default_cpts()
    grid = SlotGrid.for_size(cfg.pool_size)
    slot_probs = slot_distribution(cpts, grid)
    templates = preference_templates(grid, cfg.choice_weights)
    pools = []
    for p in range(cfg.num_pools):
        rng = np.random.default_rng([cfg.seed, cfg.stream, p])
        x = sample_feature_codes(cpts, rng, cfg.pool_size)
        probs = slot_probs[x[:, COL["transportation"]], x[:, COL["work_hour"]], x[:, COL["childcare"]]]
        primary = _categorical(probs, rng)
        pools.append(Pool(x, group_labels(x, cfg.partition_attribute), templates[primary]))
    metadata = {
        "version": FORMAT_VERSION,
        "seed": cfg.seed,
        "stream": cfg.stream,
        "n": cfg.pool_size,
        "N": cfg.num_pools,
        "partition_attribute": cfg.partition_attribute,
        "choice_weights": list(cfg.choice_weights),
        "grid": list(grid.labels),
        "block_boundary": grid.block_boundary,
        "aliases": {"public_irregular_as": cpts.public_irregular_as, "noshift_as": cpts.noshift_as},
    }
    return Dataset(pools, metadata)


def _dump_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def dataset_lines(ds: Dataset) -> list[str]:
    lines = [_dump_line(ds.metadata)]
    for pool in ds.pools:
        lines.append(_dump_line({
            "features": pool.features.tolist(),
            "groups": pool.groups.tolist(),
            "prefs": pool.prefs.tolist(),
        }))
    return lines


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_text("\n".join(dataset_lines(ds)) + "\n")


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty dataset file")

    def parse(k, text):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{k + 1}: malformed JSON ({exc.msg})") from None

    metadata = parse(0, lines[0])
    for key in ("version", "n", "N", "partition_attribute"):
        if key not in metadata:
            raise DataError(f"{path}:1: header is missing {key!r}")
    n = metadata["n"]
    partition_attribute = metadata["partition_attribute"]
    limits = np.array([len(CATEGORIES[name]) for name in FEATURES])
    pools = []
    for k, text in enumerate(lines[1:], start=1):
        if not text.strip():
            continue
        rec = parse(k, text)
        try:
            x = np.array(rec["features"], dtype=np.int64)
            g = np.array(rec["groups"], dtype=np.int64)
            y = np.array(rec["prefs"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{k + 1}: bad pool record ({exc})") from None
        if x.shape != (n, len(FEATURES)) or g.shape != (n,) or y.shape != (n, n):
            raise DataError(f"{path}:{k + 1}: pool arrays do not match n = {n}")
        if np.any(x < 0) or np.any(x >= limits):
            raise DataError(f"{path}:{k + 1}: feature code out of range")
        if np.any(y < 0) or np.any(y > 1) or np.any(np.abs(y.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise DataError(f"{path}:{k + 1}: preference rows must be stochastic")
        if not np.array_equal(g, group_labels(x, partition_attribute)):
            raise DataError(f"{path}:{k + 1}: groups inconsistent with {partition_attribute!r}")
        pools.append(Pool(x, g, y))
    if len(pools) != metadata["N"]:
        raise DataError(f"{path}: header announces {metadata['N']} pools, found {len(pools)}")
    return Dataset(pools, metadata)


@dataclass(frozen=True)
class ChiSquareResult:
    table: str
    context: str
    statistic: float
    dof: int
    p_value: float

    @property
    def passed(self) -> bool:
        return self.p_value >= 0.001


def _goodness_of_fit(observed: np.ndarray, probs: np.ndarray) -> tuple[float, int, float]:
    support = probs > 0
    if observed[~support].sum() > 0:
        return float("inf"), int(support.sum()) - 1, 0.0
    if support.sum() < 2:
        return 0.0, 0, 1.0
    total = observed[support].sum()
    res = stats.chisquare(observed[support], total * probs[support] / probs[support].sum())
    return float(res.statistic), int(support.sum()) - 1, float(res.pvalue)


def chi_square_report(cpts: CptSet, n_samples: int = 100_000, seed: int = 0) -> list[ChiSquareResult]:
    """Goodness-of-fit of every empirical conditional against its table."""
    rng = np.random.default_rng([seed, 99])
    x = sample_feature_codes(cpts, rng, n_samples)
    probs = cpts.primary_slot[x[:, COL["transportation"]], x[:, COL["work_hour"]], x[:, COL["childcare"]]]
    primary = _categorical(probs, rng)
    specs = [
        ("race", [], cpts.race, x[:, COL["race"]]),
        ("age_group", [], cpts.age_group, x[:, COL["age_group"]]),
        ("gender", [], cpts.gender, x[:, COL["gender"]]),
        ("transportation", ["race"], cpts.transportation, x[:, COL["transportation"]]),
        ("employment", ["race"], cpts.employment, x[:, COL["employment"]]),
        ("work_hour", ["employment"], cpts.work_hour, x[:, COL["work_hour"]]),
        ("num_children", ["age_group"], cpts.num_children, x[:, COL["num_children"]]),
        ("childcare", ["gender", "num_children"], cpts.childcare, x[:, COL["childcare"]]),
        ("primary_slot", ["transportation", "work_hour", "childcare"], cpts.primary_slot, primary),
    ]
    results = []
    for name, parents, table, child in specs:
        k = table.shape[-1]
        for ctx in np.ndindex(*table.shape[:-1]):
            mask = np.ones(n_samples, dtype=bool)
            for parent, code in zip(parents, ctx):
                mask &= x[:, COL[parent]] == code
            if not mask.any():
                continue
            observed = np.bincount(child[mask], minlength=k).astype(float)
            stat, dof, pval = _goodness_of_fit(observed, table[ctx])
            label = ",".join(CATEGORIES[p][c] for p, c in zip(parents, ctx)) or "-"
            results.append(ChiSquareResult(name, label, stat, dof, pval))
    return results


def gen_config_dict(cfg: GenConfig) -> dict:
    d = asdict(cfg)
    d["choice_weights"] = list(cfg.choice_weights)
    return d
