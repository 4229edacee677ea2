import pytest

from thermask.dataset import Split
from thermask.evalkit import Detection
from thermask.training import (
    DetectorAdapter,
    ScenarioError,
    TrainingScenario,
    TrainSpec,
    make_adapter,
    run_scenario,
)


class RecordingAdapter:
    """Echoes ground truth; records every protocol call."""

    name = "recording"

    def __init__(self, sources=("generic", "masked_faces"), gts=()):
        self._sources = set(sources)
        self.calls = []
        self.gts = {}
        for a in gts:
            self.gts.setdefault(a.image_id, []).append(a)

    @property
    def weight_sources(self):
        return self._sources

    def reseed(self, seed):
        self.calls.append(("reseed", seed))

    def load_weights(self, source):
        self.calls.append(("load", source))

    def freeze_backbone(self, flag):
        self.calls.append(("freeze", flag))

    def fit(self, images, annotations):
        self.calls.append(("fit", len(images)))

    def predict(self, image, image_id=""):
        return [Detection(image_id, a.box, 0.9) for a in self.gts.get(image_id, [])]


def test_enumeration_closed():
    assert [s.value for s in TrainingScenario] == ["random_init", "pretrained_generic", "pretrained_masked_faces", "pretrained_masked_faces_frozen"]
    assert [s.frozen for s in TrainingScenario] == [False, False, False, True]
    with pytest.raises(ValueError, match="random_init"):
        TrainingScenario.parse("imagenet")


def test_mock_satisfies_protocol():
    assert isinstance(RecordingAdapter(), DetectorAdapter)


@pytest.mark.parametrize("scenario", list(TrainingScenario))
def test_call_protocol(small_dataset, scenario):
    adapter = RecordingAdapter(gts=small_dataset.manifest.annotations)
    result = run_scenario(adapter, scenario, small_dataset.manifest, small_dataset.rasters, TrainSpec(repetitions=3, seed=10))
    n_train = len(small_dataset.manifest.image_ids(Split.TRAIN))
    expected = []
    for i in range(3):
        expected += [("reseed", 10 + i), ("load", scenario.weight_source), ("freeze", scenario.frozen), ("fit", n_train)]
    assert adapter.calls == expected
    assert sum(1 for c in adapter.calls if c == ("freeze", True)) == (3 if scenario.frozen else 0)
    assert result.seeds == [10, 11, 12]


def test_duplicated_runs_have_zero_std(small_dataset):
    adapter = RecordingAdapter(gts=small_dataset.manifest.annotations)
    result = run_scenario(adapter, "pretrained_generic", small_dataset.manifest, small_dataset.rasters, TrainSpec(repetitions=4))
    assert len(result.runs) == 4
    assert result.aggregate.mean == {"precision": 1.0, "recall": 1.0, "map50": 1.0}
    assert result.aggregate.std == {"precision": 0.0, "recall": 0.0, "map50": 0.0}
    assert [r["map50"] for r in result.to_dict()["runs"]] == [1.0] * 4


def test_missing_weight_source(small_dataset):
    with pytest.raises(ScenarioError, match="pretrained_masked_faces_frozen"):
        run_scenario(RecordingAdapter(sources=("generic",)), TrainingScenario.PRETRAINED_MASKED_FACES_FROZEN, small_dataset.manifest, small_dataset.rasters)


def test_needs_both_subsets(small_dataset):
    manifest = small_dataset.manifest
    only_train = type(manifest)(manifest.records, manifest.annotations, {k: Split.TRAIN for k in manifest.split}, manifest.split_kind)
    with pytest.raises(ScenarioError, match="TEST"):
        run_scenario(RecordingAdapter(), "random_init", only_train, small_dataset.rasters)


def test_unknown_adapter():
    with pytest.raises(KeyError, match="baseline"):
        make_adapter("yolov5n")


@pytest.mark.parametrize("scenario", list(TrainingScenario))
def test_baseline_scenarios(small_dataset, scenario):
    result = run_scenario(make_adapter("baseline"), scenario, small_dataset.manifest, small_dataset.rasters, TrainSpec(repetitions=3))
    assert len(result.runs) == 3
    assert result.aggregate.mean["map50"] >= 0.9
    for key in ("precision", "recall", "map50"):
        values = [getattr(r, key) for r in result.runs]
        assert result.aggregate.mean[key] == pytest.approx(sum(values) / 3)
