"""Smoke test for the hessian_forge extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import math
import tempfile

import hessian_forge as hf


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * (1.0 + abs(b))


def main():
    lam = [0.5, 1.5, 2.0, 4.0]

    f = hf.Cone("sigma-k-root", 4, k=2)
    assert f.contains(lam)
    assert close(f(lam), f(list(reversed(lam))))
    assert all(g > 0 for g in f.grad(lam))

    mu = hf.q_transform(lam)
    assert all(close(x, y) for x, y in zip(hf.q_inverse(mu), lam))
    star = hf.star_power_eigs(lam)
    logs = hf.q_transform([math.log(x) for x in lam])
    assert all(close(math.log(s), l) for s, l in zip(star, logs))
    assert close(hf.Cone("log-ma", 4).pullback(lam), hf.Cone("log-p", 4)(lam))

    d, a, eps = [1.0, -2.0, 0.3], [0.5 + 0.1j, -1.0j, 0.2], 0.1
    aa = hf.growth_threshold(eps, d, a)
    rep = hf.concentration_report(d, a, aa, eps)
    assert rep["passed_main"], rep
    assert hf.lemma_check(4, 0.1, trials=200, seed=1)["violations"] == 0

    try:
        hf.Cone("sigma-k-root", 3, k=5)
    except ValueError:
        pass
    else:
        raise AssertionError("k > n accepted")

    try:
        hf.parse_config('schema_version = 1\nmodule = "solve"\n[solver]\ntoll = 1.0\n')
    except ValueError as e:
        assert "toll" in str(e)
    else:
        raise AssertionError("misspelled key accepted")

    toml = 'schema_version = 1\nmodule = "solve"\n[problem]\nresolution = [16, 1, 16, 1]\n'
    with tempfile.TemporaryDirectory() as out:
        record = hf.run(toml, out)
    assert record["verdict"]["verdict"] == "ok", record
    assert "u.csv" in record["artifacts"]

    c3 = hf.run_criterion(3, samples=2000)
    assert c3["passed"], c3
    assert len(hf.CRITERIA) == 9

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
