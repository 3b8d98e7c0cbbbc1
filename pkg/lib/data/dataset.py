"""
Paired multi-domain slice datasets: construction, splitting and on-disk manifests
"""
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..utils.errors import DimensionError, IngestionError, ValidationError
from ..utils.logging_config import get_logger
from .phantoms import make_phantom
from .synthesis import DomainSpec, synthesize_domain
from .volume import Volume, load_volume, save_volume

logger = get_logger(__name__)

DATASET_SCHEMA_VERSION = 1
DATASET_MANIFEST = "dataset.json"


@dataclass
class SlicePair:
    """One aligned (short-scan, standard-scan) slice with its domain"""
    z: np.ndarray
    x: np.ndarray
    domain_index: int
    subject_id: str
    slice_index: int = 0

    def __post_init__(self):
        if self.z.shape != self.x.shape:
            raise DimensionError(
                f"Slice pair {self.subject_id}:{self.slice_index} has shapes {self.z.shape} and {self.x.shape}",
                subject=self.subject_id, slice=self.slice_index,
            )
        if self.domain_index < 0:
            raise ValidationError(f"Invalid domain index {self.domain_index}", subject=self.subject_id)

    @property
    def noise(self) -> np.ndarray:
        """n = z - x"""
        return self.z - self.x


@dataclass
class Subject:
    """One subject's paired volumes within a domain"""
    subject_id: str
    split: str
    short: Volume
    standard: Volume
    masks: Dict[str, np.ndarray] = field(default_factory=dict)

    def pairs(self, domain_index: int) -> List[SlicePair]:
        return [
            SlicePair(z=self.short.voxels[k], x=self.standard.voxels[k], domain_index=domain_index,
                      subject_id=self.subject_id, slice_index=k)
            for k in range(self.short.slice_count)
        ]


@dataclass
class DomainDataset:
    spec: DomainSpec
    subjects: List[Subject] = field(default_factory=list)

    def subjects_in(self, split: str) -> List[Subject]:
        return [s for s in self.subjects if s.split == split]

    def pairs(self, split: str = "train") -> List[SlicePair]:
        return [p for s in self.subjects_in(split) for p in s.pairs(self.spec.index)]

    def size(self, split: str = "train") -> int:
        return sum(s.short.slice_count for s in self.subjects_in(split))


@dataclass
class PairedDataset:
    """Per-domain collections plus the manifest describing them"""
    domains: List[DomainDataset]
    manifest: Dict[str, Any] = field(default_factory=dict)

    @property
    def training_domains(self) -> List[DomainDataset]:
        return [d for d in self.domains if not d.spec.held_out]

    @property
    def held_out_domains(self) -> List[DomainDataset]:
        return [d for d in self.domains if d.spec.held_out]

    @property
    def domain_count(self) -> int:
        return len(self.training_domains)

    def domain(self, key: Union[int, str]) -> DomainDataset:
        for d in self.domains:
            if d.spec.index == key or d.spec.name == key:
                return d
        raise ValidationError(f"Dataset has no domain '{key}'", domain=str(key))

    def sizes(self, split: str = "train") -> List[int]:
        """Training pair counts per training domain, ordered by domain index"""
        return [d.size(split) for d in sorted(self.training_domains, key=lambda d: d.spec.index)]

    def pairs(self, split: str = "train", include_held_out: bool = False) -> List[SlicePair]:
        domains = self.domains if include_held_out else self.training_domains
        return [p for d in domains for p in d.pairs(split)]

    def single_domain(self, key: Union[int, str]) -> "PairedDataset":
        """One domain re-indexed as domain 0 of a one-domain dataset (single-domain modes)"""
        source = self.domain(key)
        spec = replace(source.spec, index=0, domain_count=1, held_out=False)
        view = PairedDataset(domains=[DomainDataset(spec=spec, subjects=source.subjects)])
        view.manifest = {**self.manifest, "source_domain": source.spec.name, "domain_count": 1}
        return view


def _split_subjects(count: int, val_fraction: float, rng: np.random.Generator) -> List[str]:
    n_val = int(round(val_fraction * count))
    if val_fraction > 0 and count >= 2:
        n_val = min(max(n_val, 1), count - 1)
    else:
        n_val = min(n_val, count - 1)
    order = rng.permutation(count)
    splits = ["train"] * count
    for i in order[:n_val]:
        splits[int(i)] = "val"
    return splits


def build_dataset(
    domains: Sequence[DomainSpec],
    subjects_per_domain: Union[int, Sequence[int]],
    dims: Sequence[int],
    seed: int,
    phantom: str = "ellipsoids",
    amplitude: float = 1000.0,
    spacing: Sequence[float] = (2.0, 2.0, 2.0),
    val_fraction: float = 0.25,
    multiple: int = 16,
    num_workers: int = 0,
) -> PairedDataset:
    """
    Synthesize paired volumes for every domain and split subjects

    Subject k (counted across all domains) uses phantom seed ``seed + k``;
    the split of each domain is drawn from ``seed`` and the domain index, so
    the same seed always yields the same membership. Held-out domains put
    every subject in the ``val`` split.

    Args:
        domains: domain specs with unique indices
        subjects_per_domain: one count for all domains or one per domain
        dims: (slices, rows, columns) of each volume
        seed: base seed
        num_workers: thread count for subject synthesis (0 or 1 runs inline)

    Returns:
        PairedDataset with an in-memory manifest
    """
    if not domains:
        raise ValidationError("At least one domain is required")
    indices = [d.index for d in domains]
    if len(set(indices)) != len(indices):
        raise ValidationError(f"Duplicate domain indices: {indices}", indices=indices)

    if isinstance(subjects_per_domain, int):
        counts = [subjects_per_domain] * len(domains)
    else:
        counts = list(subjects_per_domain)
    if len(counts) != len(domains):
        raise ValidationError(
            f"Got {len(counts)} subject counts for {len(domains)} domains", counts=counts
        )
    if any(c < 1 for c in counts):
        raise ValidationError(f"Subject counts must be >= 1, got {counts}", counts=counts)

    jobs = []
    subject_number = 0
    for spec, count in zip(domains, counts):
        splits = ["val"] * count if spec.held_out else _split_subjects(
            count, val_fraction, np.random.default_rng([seed, spec.index, 2])
        )
        for k in range(count):
            jobs.append((spec, f"{spec.name}_{k:03d}", splits[k], seed + subject_number))
            subject_number += 1

    def synthesize(job) -> Subject:
        spec, subject_id, split, subject_seed = job
        clean = make_phantom(phantom, dims, subject_seed, amplitude=amplitude, spacing=spacing, multiple=multiple)
        short, standard = synthesize_domain(clean.volume, spec, seed=[subject_seed, 1])
        return Subject(subject_id=subject_id, split=split, short=short, standard=standard, masks=clean.masks)

    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            subjects = list(pool.map(synthesize, jobs))
    else:
        subjects = [synthesize(job) for job in jobs]

    grouped = {spec.index: DomainDataset(spec=spec) for spec in domains}
    for (spec, *_), subject in zip(jobs, subjects):
        grouped[spec.index].subjects.append(subject)

    dataset = PairedDataset(domains=[grouped[spec.index] for spec in domains])
    dataset.manifest = _manifest(dataset, seed=seed, dims=dims, phantom=phantom)

    logger.info(
        "dataset_built",
        domains=len(domains),
        subjects=len(subjects),
        train_sizes=dataset.sizes("train"),
        seed=seed,
    )
    return dataset


def _manifest(dataset: PairedDataset, **extra: Any) -> Dict[str, Any]:
    return {
        "schema_version": DATASET_SCHEMA_VERSION,
        **{k: (list(v) if isinstance(v, tuple) else v) for k, v in extra.items()},
        "domain_count": dataset.domain_count,
        "domains": [
            {
                **d.spec.to_dict(),
                "subjects": [
                    {
                        "id": s.subject_id,
                        "split": s.split,
                        "short": f"{d.spec.name}/{s.subject_id}/short",
                        "standard": f"{d.spec.name}/{s.subject_id}/standard",
                        "masks": f"{d.spec.name}/{s.subject_id}/masks.npz" if s.masks else None,
                    }
                    for s in d.subjects
                ],
            }
            for d in dataset.domains
        ],
    }


def save_dataset(dataset: PairedDataset, out_dir: Union[str, Path], force: bool = False,
                 extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write every subject as container volumes plus ``dataset.json``

    An existing non-empty directory is refused unless ``force`` is set.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise ValidationError(f"Output directory {out_dir} is not empty; use --force to overwrite",
                                  path=str(out_dir))
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = dict(dataset.manifest)
    manifest.update(extra or {})
    for domain, entry in zip(dataset.domains, manifest["domains"]):
        for subject, record in zip(domain.subjects, entry["subjects"]):
            save_volume(subject.short, out_dir / record["short"])
            save_volume(subject.standard, out_dir / record["standard"])
            if subject.masks:
                np.savez_compressed(out_dir / record["masks"], **subject.masks)

    with open(out_dir / DATASET_MANIFEST, 'w') as f:
        json.dump(manifest, f, indent=2)
    dataset.manifest = manifest

    logger.info("dataset_saved", path=str(out_dir), domains=len(dataset.domains))
    return out_dir


def load_dataset(path: Union[str, Path]) -> PairedDataset:
    """Read a dataset directory written by :func:`save_dataset`"""
    path = Path(path)
    manifest_path = path / DATASET_MANIFEST
    try:
        with open(manifest_path, 'r') as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise IngestionError(f"No {DATASET_MANIFEST} in {path}", path=str(path))
    except json.JSONDecodeError as e:
        raise IngestionError(f"Malformed dataset manifest {manifest_path}: {e}", path=str(path))

    try:
        domain_count = int(manifest["domain_count"])
        domains = []
        for entry in manifest["domains"]:
            spec = DomainSpec.from_dict(entry, domain_count)
            subjects = []
            for record in entry["subjects"]:
                masks = {}
                if record.get("masks"):
                    with np.load(path / record["masks"]) as archive:
                        masks = {k: archive[k].astype(bool) for k in archive.files}
                subjects.append(Subject(
                    subject_id=record["id"],
                    split=record["split"],
                    short=load_volume(path / record["short"]),
                    standard=load_volume(path / record["standard"]),
                    masks=masks,
                ))
            domains.append(DomainDataset(spec=spec, subjects=subjects))
    except (KeyError, TypeError, ValueError) as e:
        raise IngestionError(f"Malformed dataset manifest {manifest_path}: {e}", path=str(path))

    logger.info("dataset_loaded", path=str(path), domains=len(domains))
    return PairedDataset(domains=domains, manifest=manifest)
