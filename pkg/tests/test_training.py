"""
Tests for the training objective, early stopping, fine-tuning, masked-token
warm-up, full runs and ablation sweeps.
"""

import math

import numpy as np
import pandas as pd
import pytest
import torch

from isoformer.dataset import RecordTokenizer
from isoformer.encoder import init_encoder
from isoformer.exceptions import EmptyDataset, InvalidConfig, MissingMaskToken, NonFiniteLoss, ShapeMismatch
from isoformer.models.config_models import TrainConfig, WarmupConfig
from isoformer.models.report_models import EpochRecord, MetricsReport, TissueMetrics
from isoformer.network import build_model, predict
from isoformer.tokenization import build_vocabulary, tokenize_nucleotide
from isoformer.training import (
    MODALITY_CONDITIONS,
    STRATEGY_CONDITIONS,
    WARMUP_CONDITIONS,
    EarlyStopping,
    ablation_conditions,
    expression_loss,
    mlm_warmup,
    mse_loss,
    parse_condition,
    run_ablation,
    run_experiment,
    train,
    validation_loss,
    write_history_csv,
    write_metrics_tsv,
)
from tests.helpers import make_records, tiny_encoder, tiny_experiment_config, tiny_model_config


@pytest.fixture
def encoded():
    config = tiny_model_config()
    records = RecordTokenizer(config).encode_all(make_records(num_genes=4, isoforms=2))
    for record in records:
        record.targets = np.log1p(record.targets).astype(np.float32) - 2.0
    return config, records


def snapshot(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: tensor.clone() for name, tensor in model.state_dict().items()}


class TestObjective:
    """Test the squared-error objective."""

    def test_zero_when_equal(self):
        """Equal vectors give zero loss and gradient."""
        loss, grad = mse_loss([1.0, 2.0], [1.0, 2.0])
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_unit_errors_sum_over_tissues(self):
        """Squared errors add up over tissues."""
        loss, grad = mse_loss([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        assert loss == pytest.approx(3.0)
        np.testing.assert_allclose(grad, [2.0, 2.0, 2.0])

    def test_gradient_matches_finite_differences(self):
        """The closed-form gradient agrees with central differences."""
        pred, target = np.array([0.3, -1.2, 2.5]), np.array([1.0, 0.5, -0.5])
        _, grad = mse_loss(pred, target)
        eps = 1e-6
        for i in range(3):
            step = np.zeros(3)
            step[i] = eps
            numeric = (mse_loss(pred + step, target)[0] - mse_loss(pred - step, target)[0]) / (2 * eps)
            assert grad[i] == pytest.approx(numeric, abs=1e-8)

    def test_batch_is_mean_of_sample_sums(self):
        """The batch loss averages per-sample sums."""
        predictions = torch.tensor([[1.0, 1.0], [0.0, 0.0]])
        targets = torch.tensor([[0.0, 0.0], [0.0, 2.0]])
        assert float(expression_loss(predictions, targets)) == pytest.approx((2.0 + 4.0) / 2)

    def test_shape_mismatch(self):
        """Predictions and targets must have one shape."""
        with pytest.raises(ShapeMismatch):
            mse_loss([1.0, 2.0], [1.0])

    def test_adam_update_matches_hand_computation(self):
        """One Adam step matches the update worked out by hand."""
        config = TrainConfig(learning_rate=0.1)
        param = torch.tensor([1.0, -2.0], dtype=torch.float64, requires_grad=True)
        optimizer = torch.optim.Adam([param], lr=config.learning_rate,
                                     betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_epsilon)
        expected = np.array([1.0, -2.0])
        m = v = np.zeros(2)
        b1, b2 = config.adam_beta1, config.adam_beta2
        for step in (1, 2):
            optimizer.zero_grad()
            (param ** 2).sum().backward()
            optimizer.step()
            g = 2 * expected
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat, v_hat = m / (1 - b1 ** step), v / (1 - b2 ** step)
            expected = expected - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
        np.testing.assert_allclose(param.detach().numpy(), expected, atol=1e-10)


class TestEarlyStopping:
    """Test patience and best-weight tracking."""

    def test_stops_after_patience_and_keeps_best(self):
        """Training stops after patience epochs without improvement and keeps the best state."""
        stopper = EarlyStopping(patience=2)
        model = torch.nn.Linear(1, 1)
        states = {}
        for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.97], start=1):
            with torch.no_grad():
                model.weight.fill_(float(epoch))
            states[epoch] = snapshot(model)
            stopper(loss, epoch, model)
            assert stopper.early_stop == (epoch == 4)
        assert stopper.best_epoch == 2
        assert torch.equal(stopper.best_state["weight"], states[2]["weight"])

    def test_min_delta(self):
        """Gains below min_delta do not count as improvement."""
        stopper = EarlyStopping(patience=1, min_delta=0.1)
        assert stopper(1.0, 1)
        assert not stopper(0.95, 2)
        assert stopper.early_stop


class TestTrain:
    """Test fine-tuning with early stopping."""

    def test_zero_learning_rate_changes_nothing(self, encoded):
        """A zero learning rate leaves every weight untouched."""
        config, records = encoded
        model = build_model(config, seed=0)
        before = snapshot(model)
        train(model, records[:6], records[6:], TrainConfig(learning_rate=0.0, batch_size=2, max_epochs=2))
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name]), name

    def test_single_record_overfits(self, encoded):
        """A single record can be fitted almost exactly."""
        _, records = encoded
        config = tiny_model_config(dna_encoder=tiny_encoder(embed_dim=16), rna_encoder=tiny_encoder(embed_dim=16))
        model = build_model(config, seed=0)
        record = records[0]
        train_config = TrainConfig(learning_rate=1e-2, batch_size=1, max_epochs=200, early_stopping_patience=200)
        model, report, history = train(model, [record], [record], train_config)
        assert len(history) == 200
        prediction = predict(model, [record])[0]
        assert float(np.sum((prediction - record.targets) ** 2)) < 1e-3

    def test_history_and_report(self, encoded):
        """One history row per epoch and a report on the validation records."""
        config, records = encoded
        model = build_model(config, seed=0)
        _, report, history = train(model, records[:6], records[6:],
                                   TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=3))
        assert [record.epoch for record in history] == [1, 2, 3][: len(history)]
        assert history[0].improved
        assert report.loss_curve == history
        assert report.num_samples == 2
        assert not model.training

    def test_best_weights_restored(self, encoded):
        """The returned model carries the best epoch's weights."""
        config, records = encoded
        model = build_model(config, seed=0)
        model, _, history = train(model, records[:6], records[6:],
                                  TrainConfig(learning_rate=5e-2, batch_size=2, max_epochs=4, early_stopping_patience=4))
        best = min(record.val_loss for record in history)
        assert validation_loss(model, records[6:], 2) == pytest.approx(best, rel=1e-5)

    def test_deterministic(self, encoded):
        """One seed gives identical trained weights."""
        config, records = encoded
        states = []
        for _ in range(2):
            model = build_model(config, seed=1)
            train(model, records[:6], records[6:], TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=2, seed=4))
            states.append(snapshot(model))
        for name in states[0]:
            assert torch.equal(states[0][name], states[1][name]), name

    def test_freeze_encoders(self, encoded):
        """Frozen encoders keep their weights."""
        config, records = encoded
        model = build_model(config, seed=0)
        before = snapshot(model)
        train(model, records[:6], records[6:],
              TrainConfig(learning_rate=1e-2, batch_size=2, max_epochs=1, freeze_encoders=True))
        after = model.state_dict()
        assert all(torch.equal(after[n], before[n]) for n in before if n.startswith("encoders."))
        assert not torch.equal(after["head.linear.bias"], before["head.linear.bias"])

    def test_max_steps(self, encoded):
        """max_steps ends training early."""
        config, records = encoded
        model = build_model(config, seed=0)
        _, _, history = train(model, records[:6], records[6:],
                              TrainConfig(batch_size=2, max_epochs=5, max_steps=1))
        assert len(history) == 1

    def test_non_finite_loss(self, encoded):
        """An infinite target stops training with NonFiniteLoss."""
        config, records = encoded
        records[0].targets = np.full(3, np.inf, dtype=np.float32)
        with pytest.raises(NonFiniteLoss):
            train(build_model(config), records[:1], records[1:2], TrainConfig(batch_size=1, max_epochs=1))

    def test_empty_splits(self, encoded):
        """Training and validation records are both required."""
        config, records = encoded
        with pytest.raises(EmptyDataset):
            train(build_model(config), [], records, TrainConfig())
        with pytest.raises(EmptyDataset):
            train(build_model(config), records, [], TrainConfig())


class TestWarmup:
    """Test masked-token warm-up of a single encoder."""

    @pytest.fixture
    def setup(self):
        vocab = build_vocabulary("nucleotide", 1).with_mask()
        encoder = init_encoder(tiny_encoder(vocab_size=len(vocab)), seed=0)
        sequences = [tokenize_nucleotide("ACGT" * 6 + "AC" * i, vocab) for i in range(8)]
        return encoder, sequences, vocab

    def test_zero_steps_returns_unchanged_copy(self, setup):
        """Zero steps return an untouched copy."""
        encoder, sequences, vocab = setup
        result = mlm_warmup(encoder, sequences, vocab, WarmupConfig(steps=0), seed=0)
        assert result.encoder is not encoder
        assert result.losses == []
        for (name, a), (_, b) in zip(encoder.named_parameters(), result.encoder.named_parameters()):
            assert torch.equal(a, b), name

    def test_loss_falls_on_repetitive_sequences(self, setup):
        """Masked-token loss falls on repetitive sequences."""
        encoder, sequences, vocab = setup
        config = WarmupConfig(steps=50, learning_rate=1e-2, batch_size=8, mask_fraction=0.15)
        result = mlm_warmup(encoder, sequences, vocab, config, seed=0)
        assert len(result.losses) == 50
        assert np.mean(result.losses[-10:]) < np.mean(result.losses[:10])

    def test_deterministic_and_leaves_input_alone(self, setup):
        """Warm-up is seeded and works on a copy."""
        encoder, sequences, vocab = setup
        before = snapshot(encoder)
        config = WarmupConfig(steps=5)
        first = mlm_warmup(encoder, sequences, vocab, config, seed=3)
        second = mlm_warmup(encoder, sequences, vocab, config, seed=3)
        assert first.losses == second.losses
        assert all(torch.equal(encoder.state_dict()[n], before[n]) for n in before)

    def test_missing_mask_token(self, setup):
        """Warm-up needs a vocabulary with MASK."""
        encoder, sequences, _ = setup
        with pytest.raises(MissingMaskToken):
            mlm_warmup(encoder, sequences, build_vocabulary("nucleotide", 1), WarmupConfig(), seed=0)

    def test_vocabulary_larger_than_encoder(self, setup):
        """The vocabulary must fit the encoder's embedding table."""
        _, sequences, vocab = setup
        small = init_encoder(tiny_encoder(vocab_size=6), seed=0)
        with pytest.raises(InvalidConfig):
            mlm_warmup(small, sequences, vocab, WarmupConfig(), seed=0)

    def test_no_sequences(self, setup):
        """Warm-up needs sequences."""
        encoder, _, vocab = setup
        with pytest.raises(EmptyDataset):
            mlm_warmup(encoder, [], vocab, WarmupConfig(), seed=0)


class TestRunExperiment:
    """Test a full seeded run."""

    def test_run(self):
        """The test report covers every record of the test genes."""
        records = make_records(num_genes=20, isoforms=2)
        result = run_experiment(records, tiny_experiment_config(), seed=0)
        test_genes = set(result.split.test_genes)
        assert result.report.num_samples == sum(r.gene_id in test_genes for r in records)
        assert len(result.history) >= 1
        assert result.model.config.num_tissues == 3
        assert result.stats.tissues == result.model.tissue_names

    def test_fixed_test_genes_across_seeds(self):
        """Run seeds do not move the test genes."""
        records = make_records(num_genes=20, isoforms=2)
        a = run_experiment(records, tiny_experiment_config(), seed=0)
        b = run_experiment(records, tiny_experiment_config(), seed=1)
        assert a.split.test_genes == b.split.test_genes

    def test_warmup_adds_mask_tokens(self):
        """Warm-up configs build encoders with a MASK row."""
        records = make_records(num_genes=20, isoforms=2)
        config = tiny_experiment_config()
        config = config.model_copy(update={"warmup": WarmupConfig(encoders=["rna"], steps=3, batch_size=4)})
        result = run_experiment(records, config, seed=0)
        assert result.model.config.add_mask_token
        assert len(result.warmup_losses["rna"]) == 3
        assert result.tokenizer.vocabularies["rna"].mask_id is not None

    def test_protein_only_skips_non_coding(self):
        """A protein-only run trains and tests on coding transcripts only."""
        records = make_records(num_genes=20, isoforms=3)
        result = run_experiment(records, tiny_experiment_config(modalities=("protein",)), seed=0)
        test_genes = set(result.split.test_genes)
        expected = sum(r.gene_id in test_genes and r.is_coding for r in records)
        assert result.report.num_samples == expected
        assert expected < sum(r.gene_id in test_genes for r in records)


class TestAblation:
    """Test condition parsing and ablation sweeps."""

    def test_modality_preset_has_six_conditions(self):
        """The modality preset lists all six combinations."""
        names = [c.name for c in ablation_conditions("modalities")]
        assert names == MODALITY_CONDITIONS
        assert len(names) == 6

    def test_numbered_presets(self):
        """Numbered preset names expand to the same condition lists."""
        assert [c.name for c in ablation_conditions("table2")] == MODALITY_CONDITIONS
        assert [c.name for c in ablation_conditions("table3")] == [c.name for c in ablation_conditions("kmer")]
        assert [c.name for c in ablation_conditions("table4")] == STRATEGY_CONDITIONS
        assert [c.name for c in ablation_conditions("table5")] == list(WARMUP_CONDITIONS)

    def test_parse_forms(self):
        """Modality, k-mer, strategy and warm-up names each parse."""
        assert parse_condition("rna+dna").overrides == (("model.modalities", ["rna", "dna"]),)
        assert dict(parse_condition("dna_k1").overrides)["model.dna_k"] == 1
        assert dict(parse_condition("c_abstractor").overrides) == {"model.aggregation.strategy": "c_abstractor"}
        assert dict(parse_condition("dna_cold").overrides)["warmup.encoders"] == ["rna", "protein"]

    def test_unknown_condition(self):
        """Unknown and empty condition lists are rejected."""
        with pytest.raises(InvalidConfig):
            parse_condition("dna+dna")
        with pytest.raises(InvalidConfig):
            ablation_conditions(" , ")

    def test_condition_applies_to_config(self):
        """A condition overrides the base config."""
        config = parse_condition("dna+protein").apply(tiny_experiment_config())
        assert config.model.modalities == ["dna", "protein"]

    def test_sweep_rows_and_determinism(self):
        """One row per condition, reproducible across sweeps."""
        records = make_records(num_genes=20, isoforms=2)
        base = tiny_experiment_config()
        table = run_ablation(records, base, "rna,dna+rna+protein", seeds=[0, 1])
        assert [row.condition for row in table.rows] == ["rna", "dna+rna+protein"]
        assert len(table.runs) == 4
        assert all(row.num_seeds == 2 for row in table.rows)
        again = run_ablation(records, base, "rna", seeds=[0])
        assert again.runs[0].report == table.runs[0].report
        r2s = [run.report.r2 for run in table.runs if run.condition == "rna"]
        assert table.rows[0].r2_mean == pytest.approx(np.mean(r2s))
        assert table.rows[0].r2_std == pytest.approx(np.std(r2s))

    def test_no_seeds(self):
        """A sweep needs at least one seed."""
        with pytest.raises(InvalidConfig):
            run_ablation(make_records(), tiny_experiment_config(), "rna", seeds=[])


class TestReportFiles:
    """Test metrics and history files."""

    def test_metrics_tsv(self, tmp_path):
        """Undefined metrics are written as NA."""
        report = MetricsReport(
            tissues=[TissueMetrics(tissue="liver", r2=0.5, spearman=0.25), TissueMetrics(tissue="lung")],
            r2=0.5, spearman=0.25, num_samples=10,
        )
        write_metrics_tsv([("dna+rna", 3, report)], tmp_path / "metrics.tsv")
        frame = pd.read_csv(tmp_path / "metrics.tsv", sep="\t", keep_default_na=False)
        assert list(frame.columns) == ["condition", "seed", "tissue", "r2", "spearman"]
        assert frame["tissue"].tolist() == ["liver", "lung", "macro"]
        assert frame["r2"].tolist() == ["0.5", "NA", "0.5"]

    def test_history_csv(self, tmp_path):
        """History rows are written in epoch order."""
        history = [EpochRecord(epoch=1, train_loss=2.0, val_loss=1.5, improved=True)]
        write_history_csv(history, tmp_path / "history.csv")
        frame = pd.read_csv(tmp_path / "history.csv")
        assert frame.to_dict(orient="records") == [
            {"epoch": 1, "train_loss": 2.0, "val_loss": 1.5, "improved": True}
        ]
        assert math.isfinite(frame["val_loss"][0])
