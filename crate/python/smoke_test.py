"""Smoke test for the `fcc` extension module."""

import json
import math

import fcc


def main():
    p = fcc.Distribution(1, 2, 3, [4, 2, 1, 1])
    assert abs(p.mass() - 1.0) < 1e-12
    code = p.huffman()
    assert code.is_prefix_free()
    assert code.kraft_sum() == 1.0
    xs = [0, 2, 3, 1, 0, 2]
    word = code.encode(xs)
    assert word == "0110111100110", word
    assert code.decode(word) == xs
    assert abs(code.expected_length(p) - 1.75) < 1e-12

    sd = fcc.self_delimit(5)
    assert fcc.parse_self_delimited(sd + "1") == (5, "1")

    assert fcc.strategy_gap(10, 18, 1) < 0
    total, ledger = fcc.model_bits_tabcbn(3, 3, 4, 2)
    assert math.isclose(total, sum(ledger.values()))
    assert total < fcc.model_bits_density(3, 3, 4, 2)

    res = fcc.run_covariate_shift(
        [0.5, 1.0, 2.0, 4.0], [0.5, 0.5, 4.0, 4.0], samples_per_env=50, seed=1
    )
    assert res["argmin_fc"] in range(1, 5)

    ds = {"m": 2, "d": 1, "n": 3, "envs": 1,
          "model": {"kind": "raw_table", "width": 3, "nums": ["4", "2", "1", "1"]},
          "data": xs}
    blob = fcc.encode(json.dumps(ds))
    assert blob[:4] == b"FCC1"
    assert json.loads(fcc.decode(blob))["data"] == xs
    try:
        fcc.decode(blob[:-2])
    except fcc.DecodeError:
        pass
    else:
        raise AssertionError("truncated file decoded")

    print("smoke test ok")


if __name__ == "__main__":
    main()
