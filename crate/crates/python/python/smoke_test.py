"""Smoke test for the eqrc extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml
--features extension-module`, then run `python crates/python/python/smoke_test.py`.
"""

import math

import eqrc


def main():
    a = eqrc.Setting(1.0, 0.0)
    b = eqrc.Setting(0.5, math.sqrt(3) / 2)
    assert abs(eqrc.analytic_expectation(a, b) + 0.5) < 1e-12

    key = eqrc.GaugeKey("rademacher:j=3")
    assert str(key) == "rademacher:j=3"
    assert key(0.01) == 1 and key(0.1) == -1

    for n, lam, t in eqrc.sample_pairs(5, 1000):
        left = eqrc.measure_left(a, n, lam, t, key)
        right = eqrc.measure_right(a, n, lam, t, key)
        assert left == key(t) and left * right == -1

    [(value, std_error, n)] = eqrc.estimate([b], 200_000, seed=42, key=key)
    assert n == 200_000 and abs(value + 0.5) < 4.5 * std_error + 1e-3

    assert eqrc.bell(200_000, seed=3)["violated"]
    chsh = eqrc.chsh(200_000, seed=3)
    assert chsh["violated"] and abs(chsh["lhs"] - 2 * math.sqrt(2)) < 0.03
    assert not eqrc.cyclic_bell(10_000, seed=3)["violated"]
    assert not eqrc.wigner(10_000, mode="single-space")["violated"]

    tables = eqrc.triples(200_000, seed=7)
    assert abs(tables["abc'"]["+++"] - 0.375) < 0.01
    assert abs(tables["ab'c"]["+++"] - 0.125) < 0.01

    points = eqrc.sweep(20_000, steps=12)
    assert len(points) == 12
    assert all(abs(e + math.cos(th)) < 0.04 for th, e, _ in points)

    assert all(row[3] for row in eqrc.cyclic_oracle())

    try:
        eqrc.Setting(0.0, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero vector accepted")

    print("eqrc smoke test passed")


if __name__ == "__main__":
    main()
