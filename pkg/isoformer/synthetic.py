"""
Planted-signal synthetic transcripts.

Each gene gets one DNA window carrying ``c`` copies of a DNA motif; each of
its isoforms is a 5'UTR + ORF + 3'UTR transcript (or a non-coding RNA) that
may carry an RNA motif in its 3' end. Targets combine the two motifs
multiplicatively, so neither the DNA nor the RNA alone explains them, and
add a protein-length term:

    y_t = a_t * count(dna_motif) * [rna_motif in rna] + b_t * min(len(protein), P) / P + noise

Everything is drawn from one seeded generator, so a seed fixes the dataset
byte for byte.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml
from Bio.Data.CodonTable import standard_dna_table
from Bio.Seq import translate

from .exceptions import InvalidConfig, IoFailure
from .models.config_models import SyntheticConfig
from .models.data_models import GroundTruth, RegionInterval, TranscriptFeatures, TranscriptRecord
from .utils.seeding import numpy_rng

logger = logging.getLogger(__name__)

BASES = np.array(list("ACGT"))
SENSE_CODONS = sorted(standard_dna_table.forward_table)
STOP_CODON = "TAA"
MAX_ATTEMPTS = 10000


def count_motif(sequence: str, motif: str) -> int:
    """Occurrences of ``motif`` in ``sequence``, overlaps included."""
    count, start = 0, sequence.find(motif)
    while start != -1:
        count += 1
        start = sequence.find(motif, start + 1)
    return count


def _random_bases(rng: np.random.Generator, length: int) -> str:
    return "".join(BASES[rng.integers(0, 4, size=length)])


def _without_motif(rng: np.random.Generator, length: int, motif: str) -> str:
    for _ in range(MAX_ATTEMPTS):
        sequence = _random_bases(rng, length)
        if motif not in sequence:
            return sequence
    raise InvalidConfig(f"Could not draw {length} bases free of motif {motif}")


class SyntheticGenerator:
    """
    Draws genes, isoforms and targets from one named random stream.

    Args:
        config: Generator settings
        seed: Run seed; the generator uses the ``synthetic`` stream
    """

    def __init__(self, config: SyntheticConfig, seed: int):
        self.config = config
        self.seed = seed
        self.dna_motif = config.dna_motif.upper()
        self.rna_motif = config.rna_motif.upper()
        self.rng = numpy_rng(seed, "synthetic")

    def dna_window(self) -> str:
        """Motif-free background with 0..max_dna_motifs planted copies."""
        config = self.config
        window = list(_without_motif(self.rng, config.window, self.dna_motif))
        copies = int(self.rng.integers(0, config.max_dna_motifs + 1))
        width = len(self.dna_motif)
        slots = self.rng.choice(config.window // width, size=copies, replace=False)
        for slot in sorted(int(s) for s in slots):
            window[slot * width:(slot + 1) * width] = self.dna_motif
        return "".join(window)

    def _orf(self) -> str:
        config = self.config
        codons = int(self.rng.integers(config.cds_codons_min, config.cds_codons_max + 1))
        body = self.rng.integers(0, len(SENSE_CODONS), size=codons - 1)
        return "ATG" + "".join(SENSE_CODONS[i] for i in body) + STOP_CODON

    def _plant_rna_motif(self, utr3: str) -> str:
        width = len(self.rna_motif)
        position = int(self.rng.integers(0, len(utr3) - width + 1))
        return utr3[:position] + self.rna_motif + utr3[position + width:]

    def isoform(self, transcript_id: str) -> tuple[str, Optional[str], list[RegionInterval]]:
        """
        One transcript: RNA, protein (None when non-coding) and its regions.
        """
        config = self.config
        coding = bool(self.rng.random() < config.coding_fraction)
        planted = bool(self.rng.random() < config.rna_motif_rate)
        for _ in range(MAX_ATTEMPTS):
            utr5 = _random_bases(self.rng, int(self.rng.integers(config.utr5_min, config.utr5_max + 1)))
            utr3 = _random_bases(self.rng, int(self.rng.integers(config.utr3_min, config.utr3_max + 1)))
            if coding:
                cds = self._orf()
            else:
                cds = _random_bases(self.rng, 3 * int(self.rng.integers(config.cds_codons_min, config.cds_codons_max + 1)))
            if self.rna_motif not in utr5 + cds + utr3:
                break
        else:
            raise InvalidConfig(f"Could not draw an RNA free of motif {self.rna_motif}")

        if planted:
            utr3 = self._plant_rna_motif(utr3)
        rna = utr5 + cds + utr3
        if not coding:
            return rna, None, []

        protein = str(translate(cds, to_stop=True))
        regions = [
            RegionInterval(transcript_id=transcript_id, region_name="5UTR", start=0, end=len(utr5)),
            RegionInterval(transcript_id=transcript_id, region_name="CDS",
                           start=len(utr5), end=len(utr5) + len(cds)),
            RegionInterval(transcript_id=transcript_id, region_name="3UTR",
                           start=len(utr5) + len(cds), end=len(rna)),
        ]
        return rna, protein, regions

    def features(self, dna: str, rna: str, protein: Optional[str]) -> TranscriptFeatures:
        cap = self.config.protein_length_cap
        return TranscriptFeatures(
            dna_motif_count=count_motif(dna, self.dna_motif),
            rna_motif_present=self.rna_motif in rna,
            protein_fraction=min(len(protein), cap) / cap if protein else 0.0,
        )

    def generate(self) -> tuple[list[TranscriptRecord], GroundTruth]:
        config = self.config
        tissues = [f"tissue_{index + 1}" for index in range(config.num_tissues)]
        a = self.rng.uniform(0.5, 1.5, size=config.num_tissues)
        b = self.rng.uniform(0.5, 1.5, size=config.num_tissues)
        truth = GroundTruth(
            seed=self.seed,
            dna_motif=self.dna_motif,
            rna_motif=self.rna_motif,
            protein_length_cap=config.protein_length_cap,
            noise=config.noise,
            tissues=tissues,
            a=a.tolist(),
            b=b.tolist(),
        )

        records = []
        for gene_index in range(config.num_genes):
            gene_id = f"gene_{gene_index + 1:04d}"
            dna = self.dna_window()
            totals = np.zeros(config.num_tissues)
            for isoform_index in range(config.isoforms_per_gene):
                transcript_id = f"{gene_id}_t{isoform_index + 1}"
                rna, protein, regions = self.isoform(transcript_id)
                features = self.features(dna, rna, protein)
                interaction = features.dna_motif_count * float(features.rna_motif_present)
                targets = (
                    a * interaction
                    + b * features.protein_fraction
                    + config.noise * self.rng.standard_normal(config.num_tissues)
                )
                totals += targets
                truth.features[transcript_id] = features
                if regions:
                    truth.regions[transcript_id] = regions
                records.append(TranscriptRecord(
                    transcript_id=transcript_id,
                    gene_id=gene_id,
                    dna_window=dna,
                    rna_seq=rna,
                    protein_seq=protein,
                    targets=targets.tolist(),
                    strand="+",
                    target_scale="log",
                ))
            truth.gene_totals[gene_id] = totals.tolist()
        return records, truth


def generate_synthetic(config: SyntheticConfig, seed: int) -> tuple[list[TranscriptRecord], GroundTruth]:
    """
    Generate a planted-signal dataset.

    Args:
        config: Counts, lengths, motifs and noise level
        seed: Run seed

    Returns:
        tuple: Records (targets on the ``log`` scale, sorted by transcript id)
            and the ground truth, including the region table of coding isoforms

    Raises:
        InvalidConfig: If motif-free sequences cannot be drawn
    """
    records, truth = SyntheticGenerator(config, seed).generate()
    records.sort(key=lambda record: record.transcript_id)
    coding = sum(record.is_coding for record in records)
    logger.info("Generated %d synthetic transcripts (%d coding) over %d genes",
                len(records), coding, config.num_genes)
    return records, truth


def write_ground_truth(truth: GroundTruth, path: Union[str, Path]) -> None:
    """Dump the ground truth, without the region table, as YAML."""
    payload = truth.model_dump(mode="json", exclude={"regions"})
    try:
        Path(path).write_text(yaml.safe_dump(payload, sort_keys=False), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write ground truth {path}: {exc}") from exc


def read_ground_truth(path: Union[str, Path]) -> GroundTruth:
    try:
        payload = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"Cannot read ground truth {path}: {exc}") from exc
    return GroundTruth.model_validate(payload)
