import pytest
from hypothesis import given, strategies as st

from hpcdetect.errors import InvalidConfig
from hpcdetect.events import (
    INTERVAL_ENV, Category, ClassLabel, SamplingConfig, catalog, catalog_id, event_names, lookup,
    schedule_groups,
)


def test_catalog_has_thirty_entries_in_id_order():
    cat = catalog()
    assert len(cat) == 30
    assert [e.catalog_id for e in cat] == list(range(1, 31))


def test_entry_eleven_is_page_faults():
    e = catalog()[10]
    assert e.name == "PAGE_FAULTS"
    assert e.category is Category.SOFTWARE


def test_names_unique_and_category_sizes():
    cat = catalog()
    assert len({e.name for e in cat}) == 30
    sizes = {c: sum(e.category is c for e in cat) for c in Category}
    assert sizes == {Category.HARDWARE: 8, Category.SOFTWARE: 4, Category.HW_CACHE: 18}


def test_composite_access_events_use_two_counters():
    assert lookup("LL_ACCESS").counters == 2
    assert lookup("LL_READ").counters == 1


def test_lookup_accepts_kernel_prefixes():
    assert lookup("PERF_COUNT_HW_CACHE_LL_ACCESS").name == "LL_ACCESS"
    assert lookup("perf_count_sw_page_faults").name == "PAGE_FAULTS"
    assert catalog_id("DTLB_READ") == 22


def test_lookup_unknown_lists_catalog():
    with pytest.raises(KeyError) as err:
        lookup("NOT_AN_EVENT")
    assert "LL_ACCESS" in str(err.value)


def test_class_labels():
    assert [c.value for c in ClassLabel] == [0, 1, 2, 3, 4]
    assert ClassLabel(3).name == "Meltdown"


def test_sampling_config_limits():
    with pytest.raises(InvalidConfig):
        SamplingConfig(1, event_names()[:9])
    with pytest.raises(InvalidConfig):
        SamplingConfig(1, ["LL_ACCESS"], interval=0)
    with pytest.raises(InvalidConfig):
        SamplingConfig(1, ["LL_ACCESS", "LL_ACCESS"])
    with pytest.raises(InvalidConfig):
        SamplingConfig(1, ["LL_ACCESS"], max_group_size=1)
    cfg = SamplingConfig(1, ["LL_ACCESS", "PAGE_FAULTS"])
    assert cfg.event_names == ["LL_ACCESS", "PAGE_FAULTS"]


def test_interval_env_override():
    cfg = SamplingConfig.with_env(1, ["LL_ACCESS"], interval=1, environ={INTERVAL_ENV: "5"})
    assert cfg.interval == 5
    with pytest.raises(InvalidConfig):
        SamplingConfig.with_env(1, ["LL_ACCESS"], environ={INTERVAL_ENV: "fast"})


@given(st.lists(st.sampled_from(event_names()), min_size=1, max_size=30, unique=True),
       st.integers(min_value=2, max_value=8))
def test_schedule_groups_respect_counter_limit(names, limit):
    groups = schedule_groups(names, limit)
    assert sorted(i for g in groups for i in g) == list(range(len(names)))
    for g in groups:
        assert sum(lookup(names[i]).counters for i in g) <= limit


def test_schedule_groups_rejects_oversized_event():
    with pytest.raises(InvalidConfig):
        schedule_groups(["LL_ACCESS"], 1)
