import numpy as np
import pytest

from icmoe.data import (SceneSpec, from_arrays, generate, generate_arrays, load_manifest,
                        render_sample, split_indices, split_input)
from icmoe.errors import ConfigError, ContractError
from icmoe.tensor import load_icmt


def test_noiseless_intensity_gap():
    for domain, scale in (("source", 1.0), ("target", 0.6)):
        spec = SceneSpec(image_size=32, num_samples=5, domain=domain, noise_sigma=0.0,
                         texture_frequency=0.0)
        for i in range(5):
            x, m = render_sample(spec, i)
            gap = x[m == 1].mean() - x[m == 0].mean()
            assert gap == pytest.approx(0.4 * scale, abs=1e-12)


def test_deterministic_per_seed():
    spec = SceneSpec(image_size=16, num_samples=4, seed=3)
    a, b = generate_arrays(spec), generate_arrays(spec)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    c = generate_arrays(SceneSpec(image_size=16, num_samples=4, seed=4))
    assert a[0].tobytes() != c[0].tobytes()


def test_sample_independent_of_count():
    small = generate_arrays(SceneSpec(image_size=16, num_samples=2))
    large = generate_arrays(SceneSpec(image_size=16, num_samples=5))
    assert small[0].tobytes() == large[0][:2].tobytes()


@pytest.mark.parametrize("shape", ["ellipse", "blob"])
def test_area_fraction_in_range(shape):
    spec = SceneSpec(image_size=16, num_samples=1000, fg_shape=shape)
    _, masks = generate_arrays(spec)
    frac = masks.mean(axis=(1, 2))
    assert frac.min() >= 0.05 and frac.max() <= 0.3
    assert set(np.unique(masks)) <= {0.0, 1.0}


def test_values_in_unit_interval():
    x, _ = generate_arrays(SceneSpec(image_size=16, num_samples=50, domain="target"))
    assert x.min() >= 0 and x.max() <= 1


def test_domain_gap():
    src, _ = generate_arrays(SceneSpec(image_size=32, num_samples=50, domain="source"))
    tgt, _ = generate_arrays(SceneSpec(image_size=32, num_samples=50, domain="target"))
    assert abs(src.mean() - tgt.mean()) > 0.1
    assert src.std() > tgt.std()


def test_split_input_sums_back():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(3, 8, 8))
    m = rng.integers(0, 2, size=(3, 8, 8))
    fg, bg = split_input(x, m)
    assert (fg + bg).tobytes() == x.tobytes()
    assert np.all(fg[m == 0] == 0) and np.all(bg[m == 1] == 0)


def test_split_input_contracts():
    with pytest.raises(ContractError):
        split_input(np.zeros((2, 2)), np.full((2, 2), 0.5))
    with pytest.raises(ContractError):
        split_input(np.zeros((2, 2)), np.zeros((2, 3)))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SceneSpec(domain="other")
    with pytest.raises(ConfigError):
        SceneSpec(area_range=(0.3, 0.1))
    with pytest.raises(ConfigError):
        SceneSpec.from_entries({"colour": "red"})
    spec = SceneSpec(seed=7, area_range=(0.1, 0.2))
    assert SceneSpec.from_entries(spec.entries()) == spec


def test_split_sizes_and_disjoint():
    train, val = split_indices(np.arange(400), seed=0)
    assert len(train) == 300 and len(val) == 100
    assert not set(train) & set(val)
    assert split_indices(np.arange(400), seed=0)[0].tobytes() == train.tobytes()
    assert split_indices(np.arange(400), seed=1)[0].tobytes() != train.tobytes()


def test_generate_and_load(tmp_path):
    spec = SceneSpec(image_size=16, num_samples=8, domain="target", seed=2)
    root = generate(spec, tmp_path / "d")
    lines = (root / "manifest.csv").read_text().splitlines()
    assert lines[0] == "sample_id,image_path,mask_path,domain" and len(lines) == 9
    ds = load_manifest(root)
    x, m = generate_arrays(spec)
    assert ds.images.tobytes() == x.tobytes() and ds.masks.tobytes() == m.tobytes()
    assert ds.domain == "target"
    assert len(ds.subset("train")) == 6 and len(ds.subset("val")) == 2
    assert load_icmt(root / "images" / "0003.icmt").shape == (16, 16)


def test_missing_file_is_named(tmp_path):
    root = generate(SceneSpec(image_size=16, num_samples=2), tmp_path / "d")
    (root / "masks" / "0001.icmt").unlink()
    with pytest.raises(FileNotFoundError, match="0001.icmt"):
        load_manifest(root)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nowhere")


def test_from_arrays():
    ds = from_arrays(np.zeros((8, 4, 4)), np.zeros((8, 4, 4)))
    assert len(ds.train_idx) == 6 and len(ds.val_idx) == 2
