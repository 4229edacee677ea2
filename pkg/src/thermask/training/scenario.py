"""Transfer-learning scenarios for mask detectors and the repetition protocol."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from thermask.dataset import SCHEMA_VERSION, Annotation, DatasetManifest, Split
from thermask.evalkit import AggregateReport, Detection, DetectionReport, aggregate_runs, evaluate_detections
from thermask.synth import SynthConfig, generate_synthetic_dataset
from thermask.training.baseline import BaselineAdapter, BaselineParams
from thermask.training.spec import TrainSpec

MASKED_FACES = "masked_faces"


class TrainingScenario(str, enum.Enum):
    RANDOM_INIT = "random_init"
    PRETRAINED_GENERIC = "pretrained_generic"
    PRETRAINED_MASKED_FACES = "pretrained_masked_faces"
    PRETRAINED_MASKED_FACES_FROZEN = "pretrained_masked_faces_frozen"

    @property
    def weight_source(self) -> str | None:
        return {
            TrainingScenario.RANDOM_INIT: None,
            TrainingScenario.PRETRAINED_GENERIC: "generic",
            TrainingScenario.PRETRAINED_MASKED_FACES: MASKED_FACES,
            TrainingScenario.PRETRAINED_MASKED_FACES_FROZEN: MASKED_FACES,
        }[self]

    @property
    def frozen(self) -> bool:
        return self is TrainingScenario.PRETRAINED_MASKED_FACES_FROZEN

    @classmethod
    def parse(cls, name: str) -> "TrainingScenario":
        try:
            return cls(name.lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scenario {name!r}; valid names: {valid}") from None


@runtime_checkable
class DetectorAdapter(Protocol):
    """What a detector wrapper must provide to take part in scenarios.

    ``load_weights(None)`` means random initialisation. ``predict`` must
    return confidences in [0, 1].
    """

    name: str

    @property
    def weight_sources(self) -> set[str]: ...

    def reseed(self, seed: int) -> None: ...

    def load_weights(self, source: str | None) -> None: ...

    def freeze_backbone(self, flag: bool) -> None: ...

    def fit(self, images: Sequence[tuple[str, np.ndarray]], annotations: Sequence[Annotation]): ...

    def predict(self, image: np.ndarray, image_id: str = "") -> list[Detection]: ...


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioResult:
    scenario: TrainingScenario
    adapter: str
    runs: list[DetectionReport]
    aggregate: AggregateReport
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "scenario",
            "scenario": self.scenario.value,
            "adapter": self.adapter,
            "seeds": list(self.seeds),
            "aggregate": self.aggregate.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
        }


def _subset(manifest: DatasetManifest, rasters: Mapping[str, np.ndarray], split: Split):
    ids = manifest.image_ids(split)
    keep = set(ids)
    return [(i, rasters[i]) for i in ids], [a for a in manifest.annotations if a.image_id in keep]


def run_scenario(
    adapter: DetectorAdapter,
    scenario: TrainingScenario | str,
    manifest: DatasetManifest,
    rasters: Mapping[str, np.ndarray],
    spec: TrainSpec | None = None,
    iou_threshold: float = 0.5,
    conf_threshold: float = 0.5,
) -> ScenarioResult:
    """Run ``spec.repetitions`` independent fits and evaluate each on TEST.

    Run ``i`` reseeds the adapter with ``spec.seed + i``, loads the
    scenario's weights, sets the freeze flag once, fits on TRAIN and
    predicts every TEST image.
    """
    scenario = TrainingScenario.parse(scenario) if isinstance(scenario, str) else scenario
    spec = spec or TrainSpec()
    source = scenario.weight_source
    if source is not None and source not in adapter.weight_sources:
        raise ScenarioError(
            f"scenario {scenario.value} needs weight source {source!r}, which adapter "
            f"{adapter.name!r} lacks (has: {', '.join(sorted(adapter.weight_sources)) or 'none'})"
        )
    train_images, train_gts = _subset(manifest, rasters, Split.TRAIN)
    test_images, test_gts = _subset(manifest, rasters, Split.TEST)
    if not train_images:
        raise ScenarioError("the manifest has no TRAIN images")
    if not test_images:
        raise ScenarioError("the manifest has no TEST images")

    runs, seeds = [], []
    for i in range(spec.repetitions):
        seed = spec.seed + i
        adapter.reseed(seed)
        adapter.load_weights(source)
        adapter.freeze_backbone(scenario.frozen)
        adapter.fit(train_images, train_gts)
        detections = [d for image_id, img in test_images for d in adapter.predict(img, image_id)]
        runs.append(evaluate_detections(detections, test_gts, iou_threshold, conf_threshold))
        seeds.append(seed)
    return ScenarioResult(scenario, adapter.name, runs, aggregate_runs(runs), seeds)


PRETRAIN_CONFIG = SynthConfig(n_images=60, seed=9001, id_prefix="pre")


def pretrain_baseline(config: SynthConfig = PRETRAIN_CONFIG, seed: int = 0) -> BaselineParams:
    """Baseline parameters fitted on a separate synthetic masked-face set."""
    ds = generate_synthetic_dataset(config)
    adapter = BaselineAdapter()
    adapter.reseed(seed)
    adapter.load_weights("generic")
    return adapter.fit([(r.image_id, ds.rasters[r.image_id]) for r in ds.manifest.records], ds.manifest.annotations)


def _baseline_factory() -> BaselineAdapter:
    return BaselineAdapter(pretrained={MASKED_FACES: pretrain_baseline()})


ADAPTERS: dict[str, Callable[[], DetectorAdapter]] = {"baseline": _baseline_factory}


def make_adapter(name: str) -> DetectorAdapter:
    if name not in ADAPTERS:
        raise KeyError(f"unknown adapter {name!r}; registered: {', '.join(sorted(ADAPTERS))}")
    return ADAPTERS[name]()
