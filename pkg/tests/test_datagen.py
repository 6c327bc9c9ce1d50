import json

import numpy as np
import pytest

from fairsched.core import ConfigurationError, DataError, InvalidInputError, SlotGrid
from fairsched.datagen import (
    COL,
    CptSet,
    DefendantFeatures,
    GenConfig,
    chi_square_report,
    choice_slots,
    default_cpts,
    generate_dataset,
    preference_templates,
    read_dataset,
    sample_defendant,
    sample_feature_codes,
    slot_distribution,
    write_dataset,
)


def test_default_tables_are_valid_and_match_known_entries():
    c = default_cpts()
    assert c.employment[1].tolist() == [0.7, 0.3]
    assert c.work_hour[1].tolist() == [0, 0, 0, 1]
    assert c.childcare[0, 0].tolist() == [1.0, 0.0]
    # public transport, night shift -> late morning only
    assert np.allclose(c.primary_slot[0, 1, 0], [0, 0, 0, 1 / 3, 1 / 3, 1 / 3] + [0] * 6)
    # private transport, day shift, no obligation -> late afternoon
    assert np.allclose(c.primary_slot[1, 0, 0, 9:], 1 / 3)


def test_invalid_tables_rejected():
    c = default_cpts()
    bad = c.race.copy()
    bad[0] = 0.9
    with pytest.raises(ConfigurationError):
        CptSet(bad, c.age_group, c.gender, c.transportation, c.employment, c.work_hour,
               c.num_children, c.childcare, c.primary_slot)


def test_unemployed_always_no_shift():
    x = sample_feature_codes(default_cpts(), np.random.default_rng(0), 20000)
    unemployed = x[:, COL["employment"]] == 1
    assert unemployed.any()
    assert np.all(x[unemployed, COL["work_hour"]] == 3)
    with pytest.raises(InvalidInputError):
        DefendantFeatures(0, 1, 0, 0, 1, 0, 0, 0)


def test_interventions_clamp_node_and_propagate():
    rng = np.random.default_rng(1)
    x = sample_feature_codes(default_cpts(), rng, 5000, fixed={"employment": 1})
    assert np.all(x[:, COL["employment"]] == 1) and np.all(x[:, COL["work_hour"]] == 3)
    d = sample_defendant(default_cpts(), rng, fixed={"race": 1})
    assert d.race == 1
    with pytest.raises(InvalidInputError):
        sample_feature_codes(default_cpts(), rng, 1, fixed={"race": 5})


def test_chi_square_all_tables_pass():
    results = chi_square_report(default_cpts(), 100_000, seed=0)
    assert {r.table for r in results} == set(CptSet.TABLES)
    assert all(r.passed for r in results)


def test_choice_slots_on_default_grid():
    grid = SlotGrid()
    assert choice_slots(2, grid) == (2, 0, 4)  # 9:00 -> 8:00, 10:00
    assert choice_slots(0, grid) == (0, 1, 2)  # 8:00 has no earlier slot
    assert choice_slots(11, grid) == (11, 9, 10)
    rows = preference_templates(grid)
    assert np.allclose(rows.sum(axis=1), 1.0)
    assert np.all(np.count_nonzero(rows, axis=1) == 3)


@pytest.mark.parametrize("n", [2, 4, 6, 12])
def test_slot_distribution_on_subgrids(n):
    dist = slot_distribution(default_cpts(), SlotGrid.for_size(n))
    assert dist.shape == (2, 4, 2, n)
    assert np.allclose(dist.sum(axis=-1), 1.0)


def test_generate_is_deterministic_and_streams_differ():
    a = generate_dataset(GenConfig(5, 12, seed=3))
    b = generate_dataset(GenConfig(5, 12, seed=3))
    c = generate_dataset(GenConfig(5, 12, seed=3, stream=1))
    assert all(np.array_equal(p.prefs, q.prefs) and np.array_equal(p.features, q.features)
               for p, q in zip(a.pools, b.pools))
    assert not np.array_equal(a.pools[0].features, c.pools[0].features)
    # prefix stability: a longer run starts with the same pools
    d = generate_dataset(GenConfig(8, 12, seed=3))
    assert np.array_equal(d.pools[4].prefs, a.pools[4].prefs)


def test_partition_groups():
    ds = generate_dataset(GenConfig(3, 12, seed=0, partition_attribute="employment"))
    for pool in ds.pools:
        assert np.array_equal(pool.groups, pool.features[:, COL["employment"]])
    ind = ds.regroup("individual")
    assert len(ind.pools[0].partition) == 12


def test_round_trip(tmp_path):
    ds = generate_dataset(GenConfig(4, 6, seed=1, partition_attribute="work_hours"))
    path = tmp_path / "d.jsonl"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.metadata == ds.metadata
    for p, q in zip(ds.pools, back.pools):
        assert np.array_equal(p.prefs, q.prefs) and np.array_equal(p.groups, q.groups)


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "missing.jsonl")
    ds = generate_dataset(GenConfig(2, 4, seed=1))
    path = tmp_path / "d.jsonl"
    write_dataset(ds, path)
    lines = path.read_text().splitlines()
    (tmp_path / "trunc.jsonl").write_text("\n".join(lines[:-1] + [lines[-1][:40]]))
    with pytest.raises(DataError, match=":3:"):
        read_dataset(tmp_path / "trunc.jsonl")
    pool = json.loads(lines[1])
    pool["prefs"][0][0] += 0.5
    (tmp_path / "bad.jsonl").write_text("\n".join([lines[0], json.dumps(pool), lines[2]]))
    with pytest.raises(DataError):
        read_dataset(tmp_path / "bad.jsonl")


def test_gen_config_validation():
    with pytest.raises(InvalidInputError):
        GenConfig(num_pools=0)
    with pytest.raises(InvalidInputError):
        GenConfig(partition_attribute="zodiac")
    with pytest.raises(InvalidInputError):
        GenConfig(pool_size=13)
