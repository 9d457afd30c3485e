"""End-to-end runner: detect, describe, encode, classify, tabulate."""

import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from ..classify import TrainConfig, accuracy, predict_many, train_svm_ova
from ..cloud import (
    cloud_resolution,
    estimate_normals,
    load_cloud,
    random_rotation,
)
from ..descriptors import DEFAULT_RADIUS_MULT, describe_all
from ..detectors import (
    HarrisParams,
    IssParams,
    SiftDetectorParams,
    detect_harris3d,
    detect_iss,
    detect_sift3d,
)
from ..encoding import encode_fv, encode_vlad, fit_gmm, fit_kmeans
from ..errors import CellError, InvalidParameterError, Plant3DError
from .manifest import CONDITIONS, assign_stages, split
from .report import PAIRS, SKIPPED, AccuracyTable, pair_label
from .synth import SynthSpec, synth_cloud

logger = logging.getLogger(__name__)

DETECTORS = ("harris", "iss", "sift")
DESCRIPTORS = ("shot", "sift")
ENCODERS = ("fv", "vlad")
TASKS = ("condition", "stage")
SYNTH_KINDS = ("sphere", "box", "plantlike")  # one per condition, in order


@dataclass(frozen=True)
class ExperimentConfig:
    detectors: tuple = DETECTORS
    descriptors: tuple = DESCRIPTORS
    encoders: tuple = ENCODERS
    tasks: tuple = TASKS
    species: tuple = None  # None keeps every species
    k: int = 8
    # GMM variance floor as a fraction of the mean per-dimension descriptor variance
    variance_floor_rel: float = 1.0
    train_ratio: float = 0.8
    seed: int = 42
    radius_mult: float = DEFAULT_RADIUS_MULT
    normal_k: int = 10
    min_keypoints: int = 3
    repeats: int = 1
    harris: HarrisParams = field(default_factory=HarrisParams)
    iss: IssParams = field(default_factory=IssParams)
    sift: SiftDetectorParams = field(default_factory=SiftDetectorParams)
    svm: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for name, allowed in (("detectors", DETECTORS), ("descriptors", DESCRIPTORS),
                              ("encoders", ENCODERS), ("tasks", TASKS)):
            values = tuple(getattr(self, name))
            bad = [v for v in values if v not in allowed]
            if bad or not values:
                raise InvalidParameterError(f"{name} must be a non-empty subset of {allowed}")
            object.__setattr__(self, name, values)
        if self.species is not None:
            object.__setattr__(self, "species", tuple(self.species))
        if not 0 < self.train_ratio < 1:
            raise InvalidParameterError("train_ratio must lie in (0, 1)")
        if self.k < 1:
            raise InvalidParameterError("k must be >= 1")
        if self.repeats < 1:
            raise InvalidParameterError("repeats must be >= 1")
        if self.variance_floor_rel < 0:
            raise InvalidParameterError("variance_floor_rel must be >= 0")
        if self.min_keypoints < 1:
            raise InvalidParameterError("min_keypoints must be >= 1")

    _NESTED = {"harris": HarrisParams, "iss": IssParams, "sift": SiftDetectorParams,
               "svm": TrainConfig}

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON-style dict; nested parameter blocks may be partial."""
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown config key(s): {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in cls._NESTED:
                try:
                    value = cls._NESTED[key](**value)
                except TypeError as exc:
                    raise InvalidParameterError(f"bad {key} block: {exc}") from None
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self):
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    def merged(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(frozen=True)
class Sample:
    """One cloud of the dataset: a file on disk or a synthetic spec."""

    key: str
    species: str
    condition: str
    day: int
    path: str = None
    synth: SynthSpec = None
    rotation_seed: int = None

    def load(self):
        if self.path is not None:
            return load_cloud(self.path)
        cloud = synth_cloud(self.synth)
        if self.rotation_seed is not None:
            cloud = cloud.transformed(random_rotation(np.random.default_rng(self.rotation_seed)))
        return cloud


def samples_from_manifest(records):
    return [Sample(r.path, r.species, r.condition, r.day, path=r.path) for r in records]


def _synth_params(kind, maturity, rng):
    """Shape parameters that drift with growth (``maturity`` in [0, 1])."""
    if kind == "sphere":
        return {"axes": (1.0, 1.0, 1.0 + 0.8 * maturity)}
    if kind == "box":
        return {"size": (1.0, 1.0, 0.5 + maturity)}
    n_leaves = 2 + int(np.floor(2.999 * maturity))
    offset = float(rng.uniform(0, 360))
    return {"n_leaves": n_leaves,
            "leaf_angles": [offset + 360.0 * i / n_leaves for i in range(n_leaves)],
            "leaf_length": 0.3 + 0.4 * maturity}


def synthetic_suite(n_classes=3, per_class=45, n_points=3000, seed=0, noise=0.002, n_days=21):
    """Sphere / box / plantlike clouds standing in for control / heat / shade.

    Scan days are spread evenly over ``n_days``; shape proportions change with
    the day so growth stage carries some (mostly global) signal. Every cloud gets its own seed
    and a random rigid rotation.
    """
    if not 2 <= n_classes <= len(SYNTH_KINDS):
        raise InvalidParameterError(f"synthetic suite supports 2..{len(SYNTH_KINDS)} classes")
    if per_class < 2:
        raise InvalidParameterError("per_class must be >= 2")
    samples = []
    for c in range(n_classes):
        kind = SYNTH_KINDS[c]
        for i in range(per_class):
            day = i * n_days // per_class
            ss = np.random.SeedSequence([seed, c, i])
            cloud_seed, rot_seed, shape_seed = (int(s) for s in ss.generate_state(3))
            params = _synth_params(kind, day / max(n_days - 1, 1),
                                   np.random.default_rng(shape_seed))
            spec = SynthSpec(kind, n_points, params, noise, cloud_seed)
            samples.append(Sample(f"synth/{kind}/{i:03d}", "synthetic", CONDITIONS[c], day,
                                  synth=spec, rotation_seed=rot_seed))
    return samples


class FeatureCache:
    """Per-cloud geometry, keypoints and descriptors, computed once per run."""

    def __init__(self, config):
        self.config = config
        self._geometry = {}
        self._keypoints = {}
        self._descriptors = {}

    def geometry(self, sample):
        if sample.key not in self._geometry:
            cloud = sample.load()
            res = float(cloud_resolution(cloud))
            normals = estimate_normals(cloud, min(self.config.normal_k, len(cloud)))
            self._geometry[sample.key] = (cloud, res, normals)
        return self._geometry[sample.key]

    def keypoints(self, detector, sample):
        key = (detector, sample.key)
        if key not in self._keypoints:
            cloud, res, normals = self.geometry(sample)
            if detector == "harris":
                kps = detect_harris3d(cloud, normals, self.config.harris, res)
            elif detector == "iss":
                kps = detect_iss(cloud, self.config.iss, res)
            else:
                kps = detect_sift3d(cloud, self.config.sift, res)
            self._keypoints[key] = kps
        return self._keypoints[key]

    def descriptors(self, detector, descriptor, sample):
        key = (detector, descriptor, sample.key)
        if key not in self._descriptors:
            cloud, res, normals = self.geometry(sample)
            kps = self.keypoints(detector, sample)
            D, _ = describe_all(cloud, normals, kps, descriptor, self.config.radius_mult * res)
            self._descriptors[key] = D
        return self._descriptors[key]


def _round2(x):
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _labels(samples, task):
    if task == "condition":
        return [s.condition for s in samples]
    return [stage for _, stage in assign_stages(samples)]


def run_cell(descs, labels, encoder, config, seed):
    """Split, fit the codebook on training descriptors, encode, train, score."""
    idx = list(range(len(descs)))
    train, test = split(zip(idx, labels), config.train_ratio, seed)
    train_stack = np.vstack([descs[i] for i, _ in train])
    if encoder == "fv":
        floor = config.variance_floor_rel * float(train_stack.var(axis=0).mean())
        book = fit_gmm(train_stack, config.k, seed, variance_floor=floor)
        codes = [encode_fv(book, D) for D in descs]
    else:
        book = fit_kmeans(train_stack, config.k, seed)
        codes = [encode_vlad(book, D) for D in descs]
    svm_cfg = replace(config.svm, seed=seed)
    model = train_svm_ova([codes[i] for i, _ in train], [lab for _, lab in train], svm_cfg)
    preds = predict_many(model, np.array([codes[i] for i, _ in test]))
    return accuracy(preds, [lab for _, lab in test])


def run_experiment(config, samples, cache=None, dataset=None):
    """Fill an :class:`AccuracyTable` for every requested cell.

    A detector-descriptor pair that leaves any cloud with fewer than
    ``min_keypoints`` descriptors is marked skipped in every column instead
    of aborting the table.

    Raises:
        CellError: a module error, annotated with the cell and cloud.
    """
    if config.species is not None:
        samples = [s for s in samples if s.species in config.species]
    if not samples:
        raise InvalidParameterError("no samples left after the species filter")
    cache = cache or FeatureCache(config)
    labels = {task: _labels(samples, task) for task in config.tasks}
    table = AccuracyTable()
    skipped, mean_kps, spread = {}, {}, {}
    for det, desc in PAIRS:
        if det not in config.detectors or desc not in config.descriptors:
            continue
        label = pair_label(det, desc)
        t0 = time.perf_counter()
        descs = []
        for s in samples:
            try:
                descs.append(cache.descriptors(det, desc, s))
            except Plant3DError as exc:
                raise CellError(label, s.key, exc) from exc
        counts = [len(D) for D in descs]
        mean_kps[label] = round(statistics.mean(counts), 2)
        logger.info("%s: %d clouds, keypoints min/mean/max %d/%.1f/%d (%.1fs)", label,
                    len(samples), min(counts), statistics.mean(counts), max(counts),
                    time.perf_counter() - t0)
        starved = [s.key for s, n in zip(samples, counts) if n < config.min_keypoints]
        if starved:
            logger.warning("%s skipped: %d cloud(s) below %d keypoints, e.g. %s", label,
                           len(starved), config.min_keypoints, starved[0])
            skipped[label] = {"clouds": len(starved), "example": starved[0]}
            for enc in config.encoders:
                for task in config.tasks:
                    table.cells[(det, desc, enc, task)] = SKIPPED
            continue
        for task in config.tasks:
            for enc in config.encoders:
                t0 = time.perf_counter()
                runs = []
                for r in range(config.repeats):
                    try:
                        runs.append(run_cell(descs, labels[task], enc, config, config.seed + r))
                    except Plant3DError as exc:
                        raise CellError(f"{label}/{enc}/{task}", "*", exc) from exc
                table.cells[(det, desc, enc, task)] = _round2(statistics.mean(runs))
                if config.repeats > 1:
                    spread[f"{label}/{enc}/{task}"] = _round2(statistics.stdev(runs))
                logger.info("%s %s %s: %.2f%% (%.1fs)", label, enc, task,
                            table.cells[(det, desc, enc, task)], time.perf_counter() - t0)
    table.metadata = {
        "seed": config.seed,
        "species": sorted({s.species for s in samples}),
        "n_clouds": len(samples),
        "dataset": dataset or "custom",
        "stage_rule": "per-species day tertiles",
        "split": f"stratified {config.train_ratio:g}/{1 - config.train_ratio:g}",
        "parameters": config.to_dict(),
        "mean_keypoints": mean_kps,
    }
    if skipped:
        table.metadata["skipped"] = skipped
    if spread:
        table.metadata["stdev_over_repeats"] = spread
    return table
