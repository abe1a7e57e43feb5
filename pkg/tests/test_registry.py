import datetime as dt

import pytest

from diagrameval.errors import (
    DuplicateId,
    ImmutableCohort,
    InsufficientCorpus,
    InvalidCohortSize,
    SeasonIncomplete,
)
from diagrameval.registry import (
    CorpusItem,
    Registry,
    Season,
    advance_season,
    derive_seed,
    next_season_id,
    precommit_cohorts,
    stage_items,
)
from diagrameval.sampler import synthetic_corpus
from diagrameval.scoring import SeasonParams


def make_items(count, prefix, start=0, seed=0):
    """Half T2I, half TI2I, element counts around the usual difficulty."""
    out = []
    for k, (_, d) in enumerate(synthetic_corpus(count, 22.4, 9.3, seed=seed)):
        i = start + k
        mode = "T2I" if k % 2 == 0 else "TI2I"
        ref = f"refs/{prefix}{i}.png" if mode == "TI2I" else None
        out.append(CorpusItem(f"{prefix}{i:04d}", mode, d, f"task {i}", ref, {"Encoder"}, "https://x/l", dt.date(2025, 1, 1)))
    return out


@pytest.fixture
def live_registry(tmp_path):
    """Registry whose current season has 360 active items and 12 open months."""
    reg = Registry.init(tmp_path / "reg", master_seed=11)
    reg.stage(make_items(360, "a"))
    reg.advance()
    return reg


def test_item_validation():
    with pytest.raises(ValueError):
        CorpusItem("x", "TI2I", 3)
    with pytest.raises(ValueError):
        CorpusItem("x", "T2I", 3, reference_image="r.png")
    with pytest.raises(ValueError):
        CorpusItem("x", "T2I", 0)
    with pytest.raises(ValueError):
        CorpusItem.from_dict({"id": "x", "mode": "T2I", "element_count": 3, "colour": "red"})
    item = make_items(2, "q")[1]
    assert CorpusItem.from_dict(item.to_dict()) == item


def test_stage_leaves_active_pool_alone():
    season = Season("S1", active_pool=tuple(f"a{i}" for i in range(360)))
    staged = stage_items(season, make_items(120, "b"))
    assert staged.active_pool == season.active_pool
    assert len(staged.staging_pool) == len(season.staging_pool) + 120


def test_stage_rejects_duplicates():
    season = Season("S1", active_pool=("b0000",))
    with pytest.raises(DuplicateId):
        stage_items(season, make_items(3, "b"))
    with pytest.raises(DuplicateId):
        stage_items(Season("S1"), make_items(2, "c") * 2)


def test_pools_are_disjoint():
    with pytest.raises(ValueError):
        Season("S1", active_pool=("x",), staging_pool=("x",))


def test_advance_requires_all_months():
    with pytest.raises(SeasonIncomplete):
        advance_season(Season("S1", months=12))
    new = advance_season(Season("S1", active_pool=("a",), months=0))
    assert new.season_id == "S2" and new.active_pool == ("a",)


def test_advance_merges_staging_and_derives_seed():
    season = Season("S3", active_pool=("a", "b"), staging_pool=("c",), master_seed=5, months=0)
    new = advance_season(season)
    assert new.active_pool == ("a", "b", "c") and new.staging_pool == ()
    assert new.master_seed == derive_seed(5, "advance") != 5
    assert advance_season(Season("S3", active_pool=("a",), months=0)).active_pool == ("a",)


def test_seed_and_id_helpers():
    assert derive_seed(1, "01", "T2I") == derive_seed(1, "01", "T2I")
    assert derive_seed(1, "01", "T2I") != derive_seed(1, "01", "TI2I")
    assert 0 <= derive_seed(2**40, "x") < 2**63
    assert next_season_id("S9") == "S10" and next_season_id("spring") == "spring-2"


def test_precommit_twelve_months(live_registry):
    season = live_registry.precommit()
    assert season.is_complete() and len(season.committed_cohorts) == 12
    catalog = live_registry.items()
    for month, by_mode in season.committed_cohorts.items():
        ids = [i for c in by_mode.values() for i in c.item_ids]
        assert len(ids) == 30 and len(set(ids)) == 30
        for mode, cohort in by_mode.items():
            assert len(cohort.item_ids) == 15
            assert all(catalog[i].mode == mode for i in cohort.item_ids)
            assert set(cohort.item_ids) <= set(season.active_pool)


def test_precommit_is_idempotent(live_registry):
    first = live_registry.precommit().to_json()
    again = precommit_cohorts(live_registry.load_season(), live_registry.items())
    assert again.to_json() == first


def test_committed_month_cannot_change(live_registry):
    season = live_registry.precommit()
    with pytest.raises(ImmutableCohort):
        precommit_cohorts(season, live_registry.items(), split={"T2I": 10, "TI2I": 20})


def test_precommit_errors(live_registry):
    season, catalog = live_registry.load_season(), live_registry.items()
    with pytest.raises(InvalidCohortSize):
        precommit_cohorts(season, catalog, n_per_month=30, split={"T2I": 25, "TI2I": 5})
    with pytest.raises(InvalidCohortSize):
        precommit_cohorts(season, catalog, n_per_month=30, split={"T2I": 15, "TI2I": 10})
    small = Season("S9", active_pool=tuple(i.id for i in list(catalog.values())[:20]))
    with pytest.raises(InsufficientCorpus):
        precommit_cohorts(small, catalog)


def test_full_lifecycle_on_disk(live_registry):
    reg = live_registry
    committed = reg.precommit().to_dict()["committed_cohorts"]
    reg.stage(make_items(120, "b", start=360, seed=1))
    assert len(reg.load_season().active_pool) == 360
    old_id = reg.current_season_id()
    new = reg.advance()
    assert len(new.active_pool) == 480 and new.staging_pool == ()
    # the archived season's cohorts are still readable and unchanged
    archived = reg.load_season(old_id)
    assert archived.to_dict()["committed_cohorts"] == committed
    assert len(archived.staging_pool) == 120
    assert len(reg.corpus("T2I")) == 240


def test_registry_round_trip(live_registry):
    season = live_registry.precommit()
    loaded = Registry(live_registry.root).load_season()
    assert loaded == season and loaded.to_json() == season.to_json()
    assert len(Registry(live_registry.root).items()) == 360


def test_registry_stage_rejects_known_ids(live_registry):
    with pytest.raises(DuplicateId):
        live_registry.stage(make_items(1, "a"))


def test_params_freeze_once(live_registry):
    p = SeasonParams(27.3, 0.26, "S1", "T2I").freeze()
    live_registry.set_params({"T2I": p})
    assert live_registry.load_season().params["T2I"] == p
    with pytest.raises(ImmutableCohort):
        live_registry.set_params({"T2I": SeasonParams(30, 0.2, "S1", "T2I").freeze()})


def test_init_refuses_existing(tmp_path):
    Registry.init(tmp_path)
    with pytest.raises(FileExistsError):
        Registry.init(tmp_path)
