"""Shared fixtures; the expensive overfit run is computed once per session."""

from types import SimpleNamespace

import pytest

from radm.core import ModelConfig
from radm.diffusion import GenerationConstraints, sample
from radm.synthdata import SynthSpec, generate
from radm.training import TrainConfig, train

# The memorization protocol: 32 fixed synthetic posters, one training run
# end to end (conv encoder included), then one generated layout per sample.
# Batch equals the corpus size, so every step is a full-batch update.
OVERFIT_SPEC = SynthSpec(count=32, seed=7)
OVERFIT_MODEL = ModelConfig(diffusion_steps=100)
OVERFIT_TRAIN = TrainConfig(
    epochs=1,
    batch_size=32,
    lr=2e-3,
    seed=0,
    max_steps=2000,
    freeze_image_encoder=False,
)
OVERFIT_SAMPLE_STEPS = 50


@pytest.fixture(scope="session")
def overfit_run():
    """Train on the fixed 32-sample corpus and generate one layout each.

    Takes tens of minutes; shared by the training-loss test and the
    acceptance checks so the run happens at most once per session.
    """
    corpus = generate(OVERFIT_SPEC)
    model, history = train(corpus, OVERFIT_MODEL, OVERFIT_TRAIN)
    layouts = []
    for i, s in enumerate(corpus):
        constraints = GenerationConstraints(slogans=s.slogans, seed=1000 + i)
        layouts.append(
            sample(model, s.image, constraints, OVERFIT_SAMPLE_STEPS, OVERFIT_MODEL)
        )
    return SimpleNamespace(
        corpus=corpus,
        model=model,
        history=history,
        layouts=layouts,
        model_cfg=OVERFIT_MODEL,
        train_cfg=OVERFIT_TRAIN,
        sample_steps=OVERFIT_SAMPLE_STEPS,
    )
