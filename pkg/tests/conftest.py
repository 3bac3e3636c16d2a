import numpy as np
import pytest

from smallvoice import dsp
from smallvoice import experiments as xp


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose phase outcomes to fixtures (used by the acceptance reporter)
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)

LANGS = ("maninka", "pular", "susu")


def make_feature(rng, t, d, mean=None):
    frames = rng.normal(size=(t, d)).astype(np.float32)
    if mean is not None:
        frames = frames + np.asarray(mean, dtype=np.float32)
    return dsp.FeatureSequence(frames, 10.0, 30.0)


def separable_mean(label, d):
    """Class k gets +10 at feature dim 3k+1."""
    mean = np.zeros(d, dtype=np.float32)
    mean[3 * label + 1] = 10.0
    return mean


def build_langid_fixture(root, rng, n_per_class=28, d=8, seed_features=True):
    """84-record manifest (28 per language) plus separable NLF1 features."""
    features_dir = root / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for label, lang in enumerate(LANGS):
        for i in range(n_per_class):
            fname = f"{lang}_{i:03d}.wav"
            records.append(xp.ManifestRecord(
                file=fname,
                recording_session_id=f"s{label}{i:03d}",
                speaker_id=f"spk{(i % 7):02d}",
                device_id=f"d{(i % 3) + 1:03d}",
                language=lang,
                utterance_id="radio_clip",
                label=label,
                speaker_age=20 + (i % 40),
                speaker_gender="female" if i % 2 else "male",
                speaker_mothertongue=LANGS[i % 3],
            ))
            if seed_features:
                t = int(rng.integers(20, 40))
                fs = make_feature(rng, t, d, separable_mean(label, d))
                dsp.write_features(fs, features_dir / f"{lang}_{i:03d}.nlf1")
    manifest = root / "manifest.csv"
    xp.write_manifest(records, manifest)
    return manifest, features_dir, records


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


@pytest.fixture
def langid_fixture(tmp_path, rng):
    return build_langid_fixture(tmp_path, rng)
