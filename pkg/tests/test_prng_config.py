import math

import numpy as np
import pytest

from fracflow.config import CONFIG_KEYS, ConfigError, ExperimentConfig, load, loads, parse_assignment
from fracflow.prng import Xorshift64Star, splitmix64


def _reference_stream(state, n):
    """xorshift64* on numpy uint64, where overflow wraps by construction."""
    x = np.uint64(state)
    out = []
    with np.errstate(over="ignore"):
        for _ in range(n):
            x ^= x >> np.uint64(12)
            x ^= x << np.uint64(25)
            x ^= x >> np.uint64(27)
            out.append(int(x * np.uint64(0x2545F4914F6CDD1D)))
    return out


def test_splitmix_known_value():
    # first output of splitmix64 seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


@pytest.mark.parametrize("seed", [0, 1, 12345, 2 ** 63 + 7])
def test_stream_matches_reference(seed):
    g = Xorshift64Star(seed)
    start = g.state
    assert [g.next_u64() for _ in range(50)] == _reference_stream(start, 50)


def test_uniform_normal_and_integers():
    g = Xorshift64Star(3)
    u = g.uniform(-2.0, 5.0, size=2000)
    assert u.min() >= -2.0 and u.max() < 5.0
    assert abs(u.mean() - 1.5) < 0.2
    a = Xorshift64Star(9).normal(size=(3, 4))
    b = Xorshift64Star(9).normal(size=(3, 4))
    assert a.shape == (3, 4) and np.array_equal(a, b)
    z = Xorshift64Star(4).normal(size=4000)
    assert abs(z.mean()) < 0.1 and abs(z.std() - 1.0) < 0.1
    ks = {Xorshift64Star(k).integers(2, 5) for k in range(60)}
    assert ks == {2, 3, 4}
    with pytest.raises(ValueError):
        g.integers(3, 3)
    with pytest.raises(ValueError):
        Xorshift64Star(-1)


def test_uniform_is_the_top_53_bits():
    g, h = Xorshift64Star(7), Xorshift64Star(7)
    assert g.random() == (h.next_u64() >> 11) / 2.0 ** 53


def test_config_round_trip(tmp_path):
    c = ExperimentConfig(s=0.3, L=1.0, n=64, pv_cutoff=0.125, seed=5, output_dir="out dir")
    assert loads(c.dumps()) == c
    p = tmp_path / "c.cfg"
    p.write_text(c.dumps())
    assert load(str(p)) == c
    assert list(CONFIG_KEYS) == [l.split(" = ")[0] for l in c.dumps().splitlines()[1:]]


def test_config_comments_and_base():
    base = ExperimentConfig(seed=4)
    c = loads("# header\n\ns = 0.25   # order\ntruncation_radius = none\n", base)
    assert c.s == 0.25 and c.seed == 4 and c.truncation_radius is None


@pytest.mark.parametrize("text,key", [("s = 1.5", "s"), ("s = abc", "s"), ("n = 2.5", "n"),
                                      ("cfl = 0", "cfl"), ("bogus = 1", "bogus"),
                                      ("seed = none", "seed"), ("just text", "just text"),
                                      ("pv_cutoff = -1", "pv_cutoff")])
def test_config_errors_name_the_field(text, key):
    with pytest.raises(ConfigError) as err:
        loads(text)
    assert err.value.key == key
    assert f"'{key}'" in str(err.value)


def test_config_overrides_and_derived_objects():
    c = ExperimentConfig().with_overrides(s=0.4, n=None, L=2.0)
    assert c.s == 0.4 and c.n == 0 and c.L == 2.0
    assert c.params.s == 0.4 and c.params.L == 2.0
    with pytest.raises(ConfigError):
        ExperimentConfig(pv_cutoff=0.5, truncation_radius=0.25).quadrature
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(d=1)
    assert parse_assignment("L = 0.5") == ("L", 0.5)
    assert math.isclose(ExperimentConfig(cfl=1.2).cfl, 1.2)
