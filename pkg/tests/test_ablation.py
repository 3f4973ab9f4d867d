import pytest

from lpgdepth.ablation import (
    AblationEntry,
    AblationError,
    AblationPlan,
    TABLE_COLUMNS,
    format_table,
    param_count,
    run_ablation,
)
from lpgdepth.config import RunConfig
from lpgdepth.synthdata import synth_dataset

BASE = RunConfig(input_size=(32, 32), aspp_rates=(1, 2), batch_size=2, steps=3)


def test_default_plan():
    plan = AblationPlan.default(BASE)
    assert [e.name for e in plan.entries] == ["baseline", "aspp", "aspp_upconv", "full", "full_lambda0.5"]
    assert plan.config(plan.entries[-1]).lam == 0.5
    assert plan.config(plan.entries[0]).steps == BASE.steps


def test_parameter_counts_grow_along_plan():
    plan = AblationPlan.default(RunConfig())
    counts = [param_count(plan.config(e)) for e in plan.entries[:4]]
    assert counts == sorted(counts) and len(set(counts)) == 4


@pytest.mark.parametrize(
    "entries",
    [
        (),
        (AblationEntry("a"), AblationEntry("a")),
        (AblationEntry("a", {"steps": 10}),),
        (AblationEntry("a", {"seed": 1}),),
    ],
)
def test_invalid_plans(entries):
    with pytest.raises(ValueError):
        AblationPlan(BASE, entries)


def test_subset():
    plan = AblationPlan.default(BASE).subset(["full", "baseline"])
    assert [e.name for e in plan.entries] == ["full", "baseline"]
    with pytest.raises(ValueError, match="unknown"):
        AblationPlan.default(BASE).subset(["nope"])


def test_single_entry_plan_gives_one_row(tmp_path):
    data = synth_dataset(4, BASE.synth_config(), 0)
    val = synth_dataset(2, BASE.synth_config(), 1)
    rows = run_ablation(AblationPlan.default(BASE).subset(["aspp"]), data, val, work_dir=tmp_path)
    assert len(rows) == 1 and rows[0].variant == "aspp"
    assert (tmp_path / "aspp.ckpt").exists() and (tmp_path / "aspp.loss.tsv").exists()
    lines = format_table(rows).splitlines()
    assert lines[0].split("\t") == list(TABLE_COLUMNS)
    assert len(lines[1].split("\t")) == len(TABLE_COLUMNS)


def test_failure_names_entry():
    data = synth_dataset(2, RunConfig().synth_config(), 0)  # 64x64 data for a 32x32 model
    with pytest.raises(AblationError, match="'baseline'"):
        run_ablation(AblationPlan.default(BASE).subset(["baseline"]), data, data)
