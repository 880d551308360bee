"""Smoke test for the pufrla extension. Build first with `maturin develop --release`."""

import random

import pufrla


def main():
    rng = random.Random(1)

    x = "".join(rng.choice("01") for _ in range(128))
    s = pufrla.shuffle(x, 7)
    assert s != x and s.count("1") == x.count("1")
    assert pufrla.deshuffle(s, 7) == x
    assert not pufrla.balance_check("0" * 128)

    code = pufrla.BchCode()
    assert (code.n, code.k, code.t) == (127, 15, 27)
    cw = code.encode("101100111000101")
    noisy = list(cw)
    for i in rng.sample(range(127), 27):
        noisy[i] = "1" if noisy[i] == "0" else "0"
    assert code.decode("".join(noisy)) == cw

    puf = pufrla.Puf()
    r = puf.response(x)
    assert len(r) == 127 and puf.response(x) == r

    bed = pufrla.Testbed(m=99)
    out = bed.run_round()
    assert out["accepted"], out
    assert [f[1][4] for f in out["frames"]] == [1, 2, 3, 4, 5, 6]
    assert bed.run_rounds(20) == 1.0
    assert bed.pair_index == 21

    for mode in ("mitm", "bruteforce", "replay"):
        rep = pufrla.attack(mode, trials=20, m=99)
        assert rep["accepts_by_server"] == 0 and rep["passed"], rep

    m = pufrla.metrics(instances=4, crps=100, samples=2, ber=0.125)
    assert 40 < m["uniqueness_pct"] < 60, m
    assert "[protocol]" in pufrla.default_config()
    print("smoke test OK", {k: round(v, 2) for k, v in m.items() if k.endswith("pct")})


if __name__ == "__main__":
    main()
