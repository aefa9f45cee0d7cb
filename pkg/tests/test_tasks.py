import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebgfn import oracle, tasks
from ebgfn.energy import IsingEnergy
from ebgfn.state_space import State

WIDTH = (tasks.BOX[1] - tasks.BOX[0]) / tasks.LEVELS
ALL_CODES = np.arange(tasks.LEVELS)


def test_gray_examples():
    np.testing.assert_array_equal(tasks.gray_encode([0, 1, 2, 3]), [0, 1, 3, 2])
    assert tasks.gray_decode(2) == 3


def test_gray_is_bijection():
    g = tasks.gray_encode(ALL_CODES)
    assert len(np.unique(g)) == tasks.LEVELS and g.min() == 0 and g.max() == tasks.LEVELS - 1
    np.testing.assert_array_equal(tasks.gray_decode(g), ALL_CODES)
    np.testing.assert_array_equal(tasks.gray_encode(tasks.gray_decode(ALL_CODES)), ALL_CODES)


def test_adjacent_buckets_differ_in_one_bit():
    bits = tasks.int_to_bits(tasks.gray_encode(ALL_CODES))
    assert np.all(np.sum(bits[1:] != bits[:-1], axis=1) == 1)


def test_bucket_zero_decodes_to_corner():
    s = State.of([0] * 32)
    x, y = tasks.gray_dequantize(s)
    assert x == y == tasks.BOX[0] + WIDTH / 2


@given(st.floats(tasks.BOX[0], tasks.BOX[1]), st.floats(tasks.BOX[0], tasks.BOX[1]))
def test_round_trip_within_one_bucket(x, y):
    s = tasks.gray_quantize(x, y)
    assert s.D == 32 and s.is_terminal
    x2, y2 = tasks.gray_dequantize(s)
    assert abs(x2 - x) <= WIDTH and abs(y2 - y) <= WIDTH


@pytest.mark.parametrize("point", [(4.5, 0.0), (0.0, -4.01), (float("nan"), 0.0)])
def test_out_of_box_error(point):
    with pytest.raises(tasks.OutOfBoxError):
        tasks.gray_quantize(*point)


def test_layout_is_x_then_y():
    s = tasks.gray_quantize(tasks.BOX[1], tasks.BOX[0])
    bits = s.as_array()
    assert bits[:16].any() and not bits[16:].any()


@pytest.mark.parametrize("name", tasks.PLANE_DATASETS)
def test_draws_stay_in_box(name, rng):
    pts = tasks.plane_samples(name, 100_000, rng)
    assert pts.shape == (100_000, 2)
    assert np.all(pts >= tasks.BOX[0]) and np.all(pts <= tasks.BOX[1])
    x, y = tasks.plane_sample(name, rng)
    assert tasks.BOX[0] <= x <= tasks.BOX[1] and tasks.BOX[0] <= y <= tasks.BOX[1]


def test_unknown_dataset():
    with pytest.raises(ValueError):
        tasks.plane_samples("spiral", 3, np.random.default_rng(0))


def test_eight_gaussians_modes_uniform(rng):
    n = 100_000
    pts = tasks.plane_samples("8gaussians", n, rng)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert abs(np.median(r) - 2 * math.sqrt(2)) < 0.05
    mode = np.round(np.arctan2(pts[:, 1], pts[:, 0]) / (np.pi / 4)).astype(int) % 8
    counts = np.bincount(mode, minlength=8)
    sd = math.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) < 3 * sd)


def test_checkerboard_is_uniform_on_black_squares(rng):
    n = 80_000
    pts = tasks.plane_samples("checkerboard", n, rng)
    col, row = np.floor(pts[:, 0]).astype(int), np.floor(pts[:, 1]).astype(int)
    assert np.all((col + row) % 2 == 0)
    assert np.all((col >= -2) & (col < 2) & (row >= -2) & (row < 2))
    counts = np.unique(np.stack([col, row], axis=1), axis=0, return_counts=True)[1]
    assert len(counts) == 8
    sd = math.sqrt(n / 8 * 7 / 8)
    assert np.all(np.abs(counts - n / 8) < 3 * sd)
    frac = pts - np.floor(pts)
    assert np.all(np.abs(frac.mean(axis=0) - 0.5) < 0.01)


def test_torus_adjacency():
    A = tasks.torus_adjacency(4)
    assert np.array_equal(A, A.T) and np.all(A.sum(axis=1) == 4) and np.all(np.diag(A) == 0)
    assert A[0, 1] == A[0, 3] == A[0, 4] == A[0, 12] == 1


def test_ising_zero_coupling_is_fair(rng):
    data = tasks.ising_generate(tasks.IsingSpec(3, 0.0, 10_000, burn_in=5, seed=3))
    assert data.shape == (10_000, 9)
    m = data.mean(axis=0)
    assert np.all((m >= 0.48) & (m <= 0.52))


def exact_ising(N, sigma):
    D = N * N
    p = oracle.boltzmann(IsingEnergy(D, J=sigma * tasks.torus_adjacency(N)).energy(oracle.terminal_states(D)))
    return p


def neighbor_agreement(x, N):
    A = tasks.torus_adjacency(N)
    i, j = np.nonzero(np.triu(A))
    return float(np.mean(x[:, i] == x[:, j]))


@pytest.mark.parametrize("sigma", [0.2, 0.5, -0.2])
def test_ising_generator_matches_enumeration(sigma):
    spec = tasks.IsingSpec(3, sigma, 200_000, burn_in=200, thin=2, seed=1, n_chains=2000)
    data = tasks.ising_generate(spec)
    exact = exact_ising(3, sigma)
    assert oracle.total_variation(oracle.empirical_distribution(data), exact) < 0.03


def test_antiferromagnet_disagrees_with_neighbors():
    exact = exact_ising(3, -0.2)
    states = oracle.terminal_states(9)
    A = tasks.torus_adjacency(3)
    i, j = np.nonzero(np.triu(A))
    assert float(exact @ np.mean(states[:, i] == states[:, j], axis=1)) < 0.5
    data = tasks.ising_generate(tasks.IsingSpec(3, -0.2, 5000, burn_in=200, seed=2))
    assert neighbor_agreement(data, 3) < 0.5


def test_ferromagnet_agrees_more_than_independent():
    data = tasks.ising_generate(tasks.IsingSpec(10, 0.5, 400, burn_in=300, seed=4))
    assert data.shape == (400, 100)
    assert neighbor_agreement(data, 10) > 0.5 + 0.2
    magnet = np.abs((2 * data - 1).mean(axis=1))
    assert magnet.mean() > 0.8


def test_generator_reproducible():
    spec = tasks.IsingSpec(3, 0.2, 50, burn_in=20, seed=9)
    assert np.array_equal(tasks.ising_generate(spec), tasks.ising_generate(spec))


def test_invalid_ising_spec():
    with pytest.raises(ValueError):
        tasks.IsingSpec(1, 0.1)
    with pytest.raises(ValueError):
        tasks.IsingSpec(3, float("inf"))


def test_dataset_file_round_trip(tmp_path, rng):
    data = tasks.plane_dataset("moons", 300, seed=5)
    path = tmp_path / "moons.csv"
    tasks.write_dataset(path, data, "moons", 5)
    back, meta = tasks.read_dataset(path)
    assert np.array_equal(back, data) and back.dtype == data.dtype
    assert meta["D"] == "32" and meta["name"] == "moons" and meta["seed"] == "5"
    tasks.write_dataset(tmp_path / "again.csv", back, "moons", 5)
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_dataset_reader_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n")
    with pytest.raises(ValueError):
        tasks.read_dataset(bad)


def test_plane_dataset_deterministic():
    assert np.array_equal(tasks.plane_dataset("pinwheel", 100, 3), tasks.plane_dataset("pinwheel", 100, 3))
    assert not np.array_equal(tasks.plane_dataset("pinwheel", 100, 3), tasks.plane_dataset("pinwheel", 100, 4))
