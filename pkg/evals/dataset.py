"""
Evaluation scenarios for IsoFormer trend checks.

Each scenario generates a planted-signal synthetic dataset, trains one or
more ablation conditions over a few seeds and states the trend the
conditions are expected to show. Overrides are dotted configuration keys,
exactly as accepted by ``--set`` on the command line.
"""

from typing import Any, Dict, List, Optional

# Shared settings: single-nucleotide tokens so motifs stay visible, short
# transcripts so a CPU run finishes in minutes.
BASE_OVERRIDES: Dict[str, Any] = {
    "synthetic.num_genes": 200,
    "synthetic.isoforms_per_gene": 3,
    "synthetic.num_tissues": 4,
    "synthetic.window": 128,
    "synthetic.noise": 0.1,
    "synthetic.utr5_max": 40,
    "synthetic.cds_codons_max": 60,
    "synthetic.utr3_max": 80,
    "model.dna_k": 1,
    "model.rna_k": 1,
    "model.dna_encoder.max_tokens": 128,
    "model.rna_encoder.max_tokens": 320,
    "model.protein_encoder.max_tokens": 128,
    "train.learning_rate": 1e-3,
    "train.batch_size": 16,
    "train.max_epochs": 25,
    "train.early_stopping_patience": 5,
    "train.val_fraction": 0.1,
    "data.test_fraction": 0.2,
}

FIVE_SEEDS = [0, 1, 2, 3, 4]

# Test scenarios covering the expected modality, warm-up and aggregation trends
EVALUATION_SCENARIOS: List[Dict[str, Any]] = [
    {
        "id": "planted_signal_learnable",
        "description": "All three modalities recover most of the planted signal",
        "conditions": ["dna+rna+protein"],
        "expectation": "min_r2",
        "min_r2": 0.3,
        "seeds": [0, 1],
        "overrides": {},
    },
    {
        "id": "modality_ordering",
        "description": "Pairing DNA with RNA beats any single modality, and protein adds the rest",
        "conditions": ["dna", "rna", "protein", "dna+protein", "dna+rna", "dna+rna+protein"],
        "expectation": "modality_band",
        "singles": ["dna", "rna", "protein"],
        "pair": "dna+rna",
        "full": "dna+rna+protein",
        "pair_over_singles": 0.05,
        "pair_under_full": 0.02,
        "full_over_singles": 0.1,
        "seeds": FIVE_SEEDS,
        "overrides": {},
    },
    {
        "id": "warmup_transfer",
        "description": "Masked-token warm-up of the RNA and protein encoders helps the three-modality model",
        "conditions": ["dna_cold", "all_cold"],
        "expectation": "margin",
        "better": "dna_cold",
        "worse": "all_cold",
        "margin": 0.03,
        "seeds": FIVE_SEEDS,
        "overrides": {"warmup.steps": 200},
    },
    {
        "id": "strategies_agree",
        "description": "Resampling the contexts neither helps nor hurts much",
        "conditions": [
            "cross_attention",
            "resampler_cross_attention",
            "linear_projection_resampler",
            "c_abstractor",
        ],
        "expectation": "strategy_spread",
        "max_spread": 0.05,
        "default": "cross_attention",
        "resampled": "resampler_cross_attention",
        "max_deficit": 0.02,
        "seeds": FIVE_SEEDS,
        "overrides": {},
    },
]


def get_evaluation_scenarios() -> List[Dict[str, Any]]:
    """
    Get every evaluation scenario.

    Returns:
        List of scenarios with conditions, seeds and expected trend
    """
    return EVALUATION_SCENARIOS


def get_scenario(scenario_id: str) -> Optional[Dict[str, Any]]:
    """
    Get a specific scenario by ID.

    Args:
        scenario_id: Unique identifier of the scenario

    Returns:
        Scenario dictionary or None if not found
    """
    for scenario in EVALUATION_SCENARIOS:
        if scenario["id"] == scenario_id:
            return scenario
    return None


def scenario_overrides(scenario: Dict[str, Any]) -> Dict[str, Any]:
    """Base overrides with the scenario's own on top."""
    return {**BASE_OVERRIDES, **scenario["overrides"]}
