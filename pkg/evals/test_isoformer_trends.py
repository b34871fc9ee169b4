"""
Pytest evaluation suite for IsoFormer modelling trends.

These checks train small models on planted-signal synthetic data long
enough for condition differences to show, so they are marked ``slow`` and
excluded from the default test run:

    python -m pytest evals/ -m slow -v -s
"""

import pytest

from isoformer.config import resolve_config
from isoformer.synthetic import generate_synthetic
from isoformer.training import run_ablation

from .dataset import get_evaluation_scenarios, scenario_overrides

pytestmark = pytest.mark.slow

SCENARIOS = get_evaluation_scenarios()


def run_scenario(scenario):
    """Generate the scenario's data and train every condition under every seed."""
    config = resolve_config(overrides=scenario_overrides(scenario)).config
    records, _ = generate_synthetic(config.synthetic, seed=0)
    return run_ablation(records, config, scenario["conditions"], scenario["seeds"])


def check_modality_band(scenario, table):
    """Best single + margin <= pair <= full + slack, and full clears every single by its own margin."""
    singles = {name: table.row(name).r2_mean for name in scenario["singles"]}
    pair = table.row(scenario["pair"]).r2_mean
    full = table.row(scenario["full"]).r2_mean
    best_single = max(singles.values())
    assert best_single + scenario["pair_over_singles"] <= pair, \
        f"{scenario['pair']} R2 {pair:.3f} is not {scenario['pair_over_singles']} above the best single {singles}"
    assert pair <= full + scenario["pair_under_full"], \
        f"{scenario['pair']} R2 {pair:.3f} exceeds {scenario['full']} R2 {full:.3f} by more than " \
        f"{scenario['pair_under_full']}"
    for name, value in singles.items():
        assert full >= value + scenario["full_over_singles"], \
            f"{scenario['full']} R2 {full:.3f} is not {scenario['full_over_singles']} above {name} R2 {value:.3f}"


class TestIsoFormerTrends:
    """
    Trend checks across ablation conditions.

    Each scenario states the ordering or level its conditions should reach;
    a summary table is printed for every scenario.
    """

    @pytest.mark.parametrize("scenario", SCENARIOS, ids=[s["id"] for s in SCENARIOS])
    def test_scenario(self, scenario):
        table = run_scenario(scenario)

        print(f"\n=== {scenario['id']} ===")
        print(scenario["description"])
        for row in table.rows:
            print(f"{row.condition:<30} R2 {row.r2_mean:.3f} +- {row.r2_std:.3f}   "
                  f"Spearman {row.spearman_mean:.3f} +- {row.spearman_std:.3f}")

        expectation = scenario["expectation"]
        if expectation == "min_r2":
            for row in table.rows:
                assert row.r2_mean >= scenario["min_r2"], \
                    f"{row.condition} reached R2 {row.r2_mean:.3f}, expected at least {scenario['min_r2']}"
        elif expectation == "modality_band":
            check_modality_band(scenario, table)
        elif expectation == "margin":
            better, worse = table.row(scenario["better"]).r2_mean, table.row(scenario["worse"]).r2_mean
            assert better >= worse + scenario["margin"], \
                f"{scenario['better']} R2 {better:.3f} does not beat {scenario['worse']} R2 {worse:.3f} " \
                f"by {scenario['margin']}"
        elif expectation == "strategy_spread":
            means = {row.condition: row.r2_mean for row in table.rows}
            spread = max(means.values()) - min(means.values())
            assert spread <= scenario["max_spread"], f"Strategies spread {spread:.3f} R2: {means}"
            assert means[scenario["default"]] >= means[scenario["resampled"]] - scenario["max_deficit"], \
                f"{scenario['default']} trails {scenario['resampled']} by more than {scenario['max_deficit']}: {means}"
        else:
            pytest.fail(f"Unknown expectation {expectation!r}")


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s", "-m", "slow"])
