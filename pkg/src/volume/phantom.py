"""
Procedural multi-class phantoms

A phantom is painted from an ordered list of geometric primitives; later
primitives overwrite earlier ones. Generation is a pure function of
(spec, instance_seed, dims, spacing).
"""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pydantic
import structlog
from pydantic import BaseModel, ConfigDict, model_validator

from src.core.config import load_kv_file, parse_kv_text
from src.core.exceptions import ConfigError, ValidationError
from src.volume.grid import Dims, LabelGrid, Spacing, VoxelGrid

logger = structlog.get_logger(__name__)

Vec3 = Tuple[float, float, float]


class Primitive(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: Literal["ellipsoid", "box", "spherical-shell"]
    center: Vec3
    radii: Vec3
    intensity: float
    label: int
    thickness: float = 0.05


class PhantomSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    class_count: int
    primitives: Tuple[Primitive, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0
    jitter: float = 0.0

    def check(self) -> None:
        """Raise ValidationError naming the first offending primitive"""
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        if self.noise_sigma < 0 or self.jitter < 0:
            raise ValidationError("noise_sigma and jitter must be >= 0")
        for n, prim in enumerate(self.primitives):
            where = f"primitive {n} ({prim.shape})"
            if not 1 <= prim.label <= self.class_count:
                raise ValidationError(f"{where}: label {prim.label} outside 1..{self.class_count}")
            if min(prim.radii) <= 0:
                raise ValidationError(f"{where}: radii must be positive, got {prim.radii}")
            if not all(0.0 <= c <= 1.0 for c in prim.center):
                raise ValidationError(f"{where}: center {prim.center} outside [0, 1]^3")
            if not 0.0 <= prim.intensity <= 1.0:
                raise ValidationError(f"{where}: intensity {prim.intensity} outside [0, 1]")
            if prim.shape == "spherical-shell" and not 0 < prim.thickness < min(prim.radii):
                raise ValidationError(f"{where}: thickness must be in (0, min(radii))")


class DatasetSplit(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train: List[str]
    val: List[str]
    test: List[str]
    master_seed: int

    @model_validator(mode="after")
    def _disjoint(self):
        seen = set()
        for part in (self.train, self.val, self.test):
            overlap = seen.intersection(part)
            if overlap or len(set(part)) != len(part):
                raise ValueError(f"split lists are not disjoint: {sorted(overlap) or part}")
            seen.update(part)
        return self

    @property
    def all_ids(self) -> List[str]:
        return [*self.train, *self.val, *self.test]


def primitive_mask(prim: Primitive, points: np.ndarray) -> np.ndarray:
    """Membership of normalized points (..., 3) in one primitive"""
    center = np.asarray(prim.center)
    radii = np.asarray(prim.radii)
    offset = points - center
    if prim.shape == "box":
        return np.all(np.abs(offset) <= radii, axis=-1)
    outer = np.sum((offset / radii) ** 2, axis=-1) <= 1.0
    if prim.shape == "ellipsoid":
        return outer
    inner = np.sum((offset / (radii - prim.thickness)) ** 2, axis=-1) < 1.0
    return outer & ~inner


def _grid_points(dims: Dims) -> np.ndarray:
    axes = [(np.arange(n, dtype=np.float64) + 0.5) / n for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _jittered(prim: Primitive, rng: np.random.Generator, jitter: float) -> Primitive:
    center = np.clip(np.asarray(prim.center) + rng.uniform(-jitter, jitter, 3), 0.0, 1.0)
    radii = np.asarray(prim.radii) * (1.0 + rng.uniform(-jitter, jitter, 3))
    intensity = float(np.clip(prim.intensity + rng.uniform(-jitter, jitter), 0.0, 1.0))
    thickness = min(prim.thickness, 0.9 * float(radii.min()))
    return prim.model_copy(update={
        "center": tuple(float(c) for c in center),
        "radii": tuple(float(r) for r in radii),
        "intensity": intensity,
        "thickness": thickness,
    })


def generate_phantom(
    spec: PhantomSpec,
    instance_seed: int,
    dims: Dims,
    spacing: Spacing = (1.0, 1.0, 1.0),
) -> Tuple[VoxelGrid, LabelGrid]:
    spec.check()
    rng = np.random.default_rng([spec.seed, instance_seed])
    points = _grid_points(tuple(dims))
    values = np.zeros(tuple(dims), dtype=np.float64)
    labels = np.zeros(tuple(dims), dtype=np.uint16)

    for prim in spec.primitives:
        if spec.jitter > 0:
            prim = _jittered(prim, rng, spec.jitter)
        inside = primitive_mask(prim, points)
        values[inside] = prim.intensity
        labels[inside] = prim.label

    if spec.noise_sigma > 0:
        values = np.clip(values + rng.normal(0.0, spec.noise_sigma, values.shape), 0.0, 1.0)

    return VoxelGrid(values.astype(np.float32), spacing), LabelGrid(labels, spec.class_count, spacing)


def perturbed_family(spec: PhantomSpec, scale: float, seed: int) -> PhantomSpec:
    """Out-of-domain variant: every primitive shifted and rescaled once"""
    rng = np.random.default_rng(seed)
    primitives = tuple(_jittered(prim, rng, scale) for prim in spec.primitives)
    return spec.model_copy(update={"primitives": primitives, "seed": spec.seed + seed + 1})


def default_phantom_spec() -> PhantomSpec:
    """Head-like family: soft tissue, a skull shell and a jaw block"""
    return PhantomSpec(
        class_count=3,
        primitives=(
            Primitive(shape="ellipsoid", center=(0.5, 0.5, 0.5), radii=(0.38, 0.42, 0.42), intensity=0.3, label=1),
            Primitive(shape="spherical-shell", center=(0.5, 0.52, 0.6), radii=(0.32, 0.34, 0.3),
                      intensity=0.9, label=2, thickness=0.05),
            Primitive(shape="box", center=(0.5, 0.38, 0.26), radii=(0.18, 0.1, 0.06), intensity=0.7, label=3),
            Primitive(shape="ellipsoid", center=(0.5, 0.3, 0.3), radii=(0.1, 0.05, 0.04), intensity=1.0, label=3),
        ),
        noise_sigma=0.01,
        seed=7,
        jitter=0.04,
    )


_PRIMITIVE_KEYS = {"shape", "center", "radii", "intensity", "label", "thickness"}


def phantom_spec_from_entries(entries: Dict[str, object]) -> PhantomSpec:
    """Build a spec from ``key = value`` entries with ``primitive.N.*`` groups"""
    top: Dict[str, object] = {}
    groups: Dict[int, Dict[str, object]] = {}
    for key, value in entries.items():
        parts = key.split(".")
        if parts[0] == "primitive":
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in _PRIMITIVE_KEYS:
                raise ConfigError(f"bad primitive key {key!r}")
            groups.setdefault(int(parts[1]), {})[parts[2]] = value
        else:
            top[key] = value
    try:
        primitives = tuple(Primitive.model_validate(groups[n]) for n in sorted(groups))
        return PhantomSpec.model_validate({**top, "primitives": primitives})
    except pydantic.ValidationError as e:
        raise ConfigError(str(e)) from e


def load_phantom_spec(path: Path | str) -> PhantomSpec:
    return phantom_spec_from_entries(load_kv_file(path))


def parse_phantom_spec(text: str) -> PhantomSpec:
    return phantom_spec_from_entries(parse_kv_text(text))


def dump_phantom_spec(spec: PhantomSpec) -> str:
    lines = [
        f"class_count = {spec.class_count}",
        f"noise_sigma = {spec.noise_sigma!r}",
        f"seed = {spec.seed}",
        f"jitter = {spec.jitter!r}",
    ]
    for n, prim in enumerate(spec.primitives):
        lines += [
            f"primitive.{n}.shape = {prim.shape}",
            f"primitive.{n}.center = {', '.join(repr(c) for c in prim.center)}",
            f"primitive.{n}.radii = {', '.join(repr(r) for r in prim.radii)}",
            f"primitive.{n}.intensity = {prim.intensity!r}",
            f"primitive.{n}.label = {prim.label}",
            f"primitive.{n}.thickness = {prim.thickness!r}",
        ]
    return "\n".join(lines) + "\n"


def make_population(
    spec: PhantomSpec,
    counts: Sequence[int],
    dims: Dims,
    spacing: Spacing = (1.0, 1.0, 1.0),
    master_seed: int = 0,
    id_prefix: str = "subject",
) -> Tuple[List[Tuple[str, VoxelGrid, LabelGrid]], DatasetSplit]:
    """Generate train/val/test phantoms; ``counts`` is (train, val, test)"""
    if len(counts) != 3 or min(counts) < 0:
        raise ConfigError(f"counts must be (train, val, test) >= 0, got {tuple(counts)}")
    total = int(sum(counts))
    rng = np.random.default_rng(master_seed)
    instance_seeds = rng.integers(0, 2**31 - 1, size=total)
    order = rng.permutation(total)

    ids = [f"{id_prefix}_{n:03d}" for n in range(total)]
    subjects = []
    for subject_id, instance_seed in zip(ids, instance_seeds):
        grid, labels = generate_phantom(spec, int(instance_seed), dims, spacing)
        subjects.append((subject_id, grid, labels))
        logger.debug("phantom_generated", subject=subject_id, instance_seed=int(instance_seed))

    shuffled = [ids[n] for n in order]
    n_train, n_val, _ = counts
    split = DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        master_seed=master_seed,
    )
    logger.info("population_generated", total=total, train=n_train, val=n_val, test=total - n_train - n_val)
    return subjects, split


def subject_counts(count: int, fractions: Optional[Tuple[float, float]] = None) -> Tuple[int, int, int]:
    """Split ``count`` into (train, val, test) following the 20/5/5 desk ratio"""
    train_frac, val_frac = fractions or (20 / 30, 5 / 30)
    n_train = max(1, int(round(count * train_frac))) if count else 0
    n_val = min(count - n_train, int(round(count * val_frac)))
    return n_train, n_val, count - n_train - n_val
