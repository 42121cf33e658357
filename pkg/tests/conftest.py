import numpy as np
import pytest

from hclpipe import (
    ClassSpace,
    ConsensusPolicy,
    CorrectorModel,
    Dataset,
    GeneratorConfig,
    Sample,
    build_queue,
    calibrate_to_table1,
    generate_dataset,
)
from hclpipe.annotation import apply_correction
from hclpipe.simulator import annotation_set_from_pair


@pytest.fixture(scope="session")
def default_world():
    """The default synthetic world: (train, test, prototypes)."""
    return generate_dataset(GeneratorConfig())


@pytest.fixture(scope="session")
def default_run(default_world):
    """A completed annotation run on the default world (treat as read-only)."""
    train, _, _ = default_world
    pair = calibrate_to_table1(0.4402, 0.9297, train.k, seed=1042, easy_class_fraction=0.2)
    annset = annotation_set_from_pair(pair, train.samples)
    run, queue = build_queue(train, annset, ConsensusPolicy("unanimous-pair"))
    corrector = CorrectorModel(error_rate=0.0, seed=2042)
    pending = list(queue.pending)
    gts = np.array([train[sid].ground_truth for sid in pending], dtype=np.int64)
    for sid, label in zip(pending, corrector.correct_many(pending, gts, train.k)):
        apply_correction(run, queue, sid, int(label), "oracle")
    return run


def make_tiny_dataset(k=3, d=4, n=6, seed=0, with_gt=True):
    """Hand-scale dataset for protocol tests (labels cycle 0..k-1)."""
    rng = np.random.default_rng(seed)
    names = [f"c{i}" for i in range(k)]
    samples = [
        Sample(
            id=f"s{i}",
            features=rng.normal(size=d),
            ground_truth=(i % k) if with_gt else None,
            meta={"hint": f"img{i}.png"},
        )
        for i in range(n)
    ]
    return Dataset(samples, ClassSpace(names))


@pytest.fixture
def tiny_dataset():
    return make_tiny_dataset()
