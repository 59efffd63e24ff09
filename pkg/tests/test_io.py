import logging

import numpy as np
import pytest

from firesale_maxent import io
from firesale_maxent.core import BankSheet, DegreeSequences, HoldingsMatrix, marginals
from firesale_maxent.errors import ParseError, ValidationError
from firesale_maxent.sampling import SampleBatch, band_from_draws

FIXTURE = """bank_id,equity,cash,bonds
alpha,1.5,10,5
beta,0.25,0.1,2.5
"""


def _write(tmp_path, text, name="h.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_two_bank_fixture_round_trips_bitwise(tmp_path):
    x, sheet = io.load_holdings(_write(tmp_path, FIXTURE))
    assert x.bank_ids == ("alpha", "beta") and x.asset_ids == ("cash", "bonds")
    np.testing.assert_array_equal(sheet.sizes, [15.0, 2.6])
    io.save_holdings(tmp_path / "out.csv", x, sheet)
    io.save_holdings(tmp_path / "out2.csv", *io.load_holdings(tmp_path / "out.csv"))
    assert (tmp_path / "out.csv").read_bytes() == (tmp_path / "out2.csv").read_bytes()


def test_awkward_reals_round_trip_exactly(tmp_path, rng):
    x = HoldingsMatrix(rng.exponential(1.0, (5, 3)) / 3.0)
    sheet = BankSheet(x.entries.sum(axis=1), rng.uniform(0.01, 0.1, 5) * np.pi, x.bank_ids)
    io.save_holdings(tmp_path / "h.csv", x, sheet, meta={"seed": 3})
    y, back = io.load_holdings(tmp_path / "h.csv")
    assert y.entries.tobytes() == x.entries.tobytes()
    assert back.equities.tobytes() == sheet.equities.tobytes()


def test_negative_entry_names_cell(tmp_path):
    text = FIXTURE.replace("0.1,2.5", "-0.1,2.5")
    with pytest.raises(ValidationError, match=r"bank beta, asset cash \(line 3, column 3\)"):
        io.load_holdings(_write(tmp_path, text))


def test_all_violations_reported(tmp_path):
    text = "bank_id,equity,cash,bonds\nalpha,0,10,-5\nbeta,-1,-0.1,2.5\n"
    with pytest.raises(ValidationError) as info:
        io.load_holdings(_write(tmp_path, text))
    v = info.value.violations
    assert len(v) == 4
    assert any("bank alpha" in m and "equity" in m for m in v)
    assert any("bank beta" in m and "equity" in m for m in v)


def test_parse_errors_carry_position(tmp_path):
    with pytest.raises(ParseError) as info:
        io.load_holdings(_write(tmp_path, FIXTURE.replace("0.1,2.5", "0.1,abc")))
    assert (info.value.line, info.value.column) == (3, 4)
    with pytest.raises(ParseError) as info:
        io.load_holdings(_write(tmp_path, FIXTURE + "gamma,1,2\n"))
    assert info.value.line == 4
    with pytest.raises(ParseError):
        io.load_holdings(_write(tmp_path, "bank,equity,cash\nx,1,1\n"))


def test_size_column_is_checked_but_row_sums_win(tmp_path, caplog):
    text = "bank_id,equity,size,cash,bonds\nalpha,1.5,15,10,5\nbeta,0.25,2.7,0.1,2.5\n"
    with caplog.at_level(logging.WARNING, logger="firesale_maxent.io"):
        _, sheet = io.load_holdings(_write(tmp_path, text))
    assert "beta" in caplog.text
    np.testing.assert_array_equal(sheet.sizes, [15.0, 2.6])


def test_strength_files_round_trip(tmp_path):
    x, sheet = io.load_holdings(_write(tmp_path, FIXTURE))
    s = marginals(x)
    d = DegreeSequences([2, 2], [2, 2])
    io.save_strengths(tmp_path / "banks.csv", tmp_path / "assets.csv", s, sheet, d)
    s2, sheet2, d2 = io.load_strengths(tmp_path / "banks.csv", tmp_path / "assets.csv")
    np.testing.assert_array_equal(s2.bank_sizes, s.bank_sizes)
    np.testing.assert_array_equal(s2.asset_caps, s.asset_caps)
    assert (s2.bank_ids, s2.asset_ids) == (s.bank_ids, s.asset_ids)
    np.testing.assert_array_equal(d2.bank_degrees, d.bank_degrees)
    np.testing.assert_array_equal(d2.asset_degrees, d.asset_degrees)
    np.testing.assert_array_equal(sheet2.equities, sheet.equities)
    np.testing.assert_array_equal(io.load_sheet(tmp_path / "banks.csv").sizes, s.bank_sizes)
    io.save_strengths(tmp_path / "b.csv", tmp_path / "a.csv", s, sheet)
    assert io.load_strengths(tmp_path / "b.csv", tmp_path / "a.csv")[2] is None


def test_market_overrides(tmp_path):
    path = _write(tmp_path, "asset_id,illiquidity,shock\nbonds,2e-9,0.05\n", "m.csv")
    mkt = io.load_market(path, ("cash", "bonds"))
    np.testing.assert_array_equal(mkt.illiquidity, [0.0, 2e-9])
    np.testing.assert_array_equal(mkt.shock, [0.01, 0.05])
    io.save_market(tmp_path / "m2.csv", ("cash", "bonds"), mkt)
    again = io.load_market(tmp_path / "m2.csv", ("cash", "bonds"))
    np.testing.assert_array_equal(again.illiquidity, mkt.illiquidity)
    np.testing.assert_array_equal(again.shock, mkt.shock)
    with pytest.raises(ValidationError):
        io.load_market(_write(tmp_path, "asset_id,illiquidity,shock\nzzz,1,1\n", "bad.csv"),
                       ("cash", "bonds"))


def test_mask_loading(tmp_path):
    path = _write(tmp_path, "bank_id,cash,bonds\nalpha,1,0\nbeta,1,1\n", "mask.csv")
    np.testing.assert_array_equal(io.load_mask(path, ("alpha", "beta"), ("cash", "bonds")),
                                  [[True, False], [True, True]])
    with pytest.raises(ValidationError):
        io.load_mask(_write(tmp_path, "bank_id,cash,bonds\nalpha,1,2\nbeta,1,1\n", "m2.csv"),
                     ("alpha", "beta"), ("cash", "bonds"))


def test_batch_round_trip(tmp_path, rng):
    b = SampleBatch("abc123", 7, 4, rng.random((4, 3)) / 7, rng.random((4, 3)) / 3,
                    rng.random(4), ("x", "y", "z"), {"kind": "MECAPM"})
    io.save_batch(tmp_path / "b.csv", b, meta={"tool": "t"})
    back = io.load_batch(tmp_path / "b.csv")
    assert (back.ensemble_hash, back.seed, back.n_samples, back.bank_ids) == ("abc123", 7, 4,
                                                                              ("x", "y", "z"))
    for metric in ("systemicness", "iv", "av"):
        assert back.draws(metric).tobytes() == b.draws(metric).tobytes()
    assert back.metadata == {"kind": "MECAPM"}


def test_band_round_trip(tmp_path, rng):
    band = band_from_draws(rng.random((50, 3)), 0.05, 0.95, "iv", ("x", "y", "z"))
    io.save_band(tmp_path / "band.csv", band)
    back = io.load_band(tmp_path / "band.csv")
    assert back.bank_ids == band.bank_ids and back.metric == "iv"
    for name in ("lower", "upper", "point_estimate"):
        assert getattr(back, name).tobytes() == getattr(band, name).tobytes()
    av = band_from_draws(rng.random(50), 0.1, 0.9, "av")
    io.save_band(tmp_path / "av.csv", av)
    back = io.load_band(tmp_path / "av.csv")
    assert back.bank_ids == () and back.upper[0] == av.upper


def test_json_errors_have_position(tmp_path):
    doc = {"b": [1.0, 2.5], "a": "x"}
    io.write_json(tmp_path / "d.json", doc)
    assert io.read_json(tmp_path / "d.json") == doc
    with pytest.raises(ParseError) as info:
        io.read_json(_write(tmp_path, '{\n  "a": 1,\n}\n', "bad.json"))
    assert info.value.line == 3
