import itertools
import math

import numpy as np
import pytest
import torch

from conftest import random_batch, tiny_model
from rationale_st.losses import (
    BatchWeights,
    LossWeights,
    PseudoBatch,
    StudentLossOptions,
    coherence_loss,
    coherence_terms,
    completeness_loss,
    compute_batch_weights,
    joint_student_loss,
    sufficiency_loss,
    supervised_loss,
    uniform_batch_weights,
    weighted_pseudo_loss,
)
from rationale_st.model import masked_ids


def logp(*rows):
    return torch.log(torch.tensor(rows, dtype=torch.float64))


def rat_logp(p1_rows):
    """(B, L, 2) log-probs from per-token P(r=1)."""
    p = torch.tensor(p1_rows, dtype=torch.float64)
    return torch.log(torch.stack([1 - p, p], -1))


class TestSupervised:
    def test_two_halves(self):
        loss = supervised_loss(logp([0.5, 0.5]), rat_logp([[0.5]]), torch.tensor([0]), torch.tensor([[1]]),
                               torch.tensor([[True]]))
        assert float(loss) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_perfect_predictions(self):
        loss = supervised_loss(logp([1 - 1e-15, 1e-15]), rat_logp([[1 - 1e-15, 1e-15]]), torch.tensor([0]),
                               torch.tensor([[1, 0]]), torch.ones(1, 2, dtype=torch.bool))
        assert float(loss) < 1e-12

    def test_batch_mean_of_examples(self):
        tl = logp([0.7, 0.3], [0.2, 0.8])
        rl = rat_logp([[0.9, 0.2, 0.6], [0.3, 0.4, 0.5]])
        y = torch.tensor([0, 1])
        r = torch.tensor([[1, 0, 1], [0, 1, 0]])
        dm = torch.tensor([[True, True, True], [True, True, False]])
        ex0 = -math.log(0.7) - math.log(0.9) - math.log(0.8) - math.log(0.6)
        ex1 = -math.log(0.8) - math.log(0.7) - math.log(0.4)
        assert float(supervised_loss(tl, rl, y, r, dm)) == pytest.approx((ex0 + ex1) / 2, abs=1e-12)

    def test_token_mean_reduction(self):
        tl, rl = logp([0.5, 0.5]), rat_logp([[0.5, 0.5]])
        loss = supervised_loss(tl, rl, torch.tensor([1]), torch.tensor([[1, 0]]), torch.ones(1, 2, dtype=torch.bool),
                               token_reduction="mean")
        assert float(loss) == pytest.approx(2 * math.log(2))

    def test_missing_gold(self):
        with pytest.raises(ValueError):
            supervised_loss(logp([0.5, 0.5]), rat_logp([[0.5]]), torch.tensor([0]), None, torch.tensor([[True]]))


class TestBatchWeights:
    def test_two_confidences(self):
        w = compute_batch_weights([0.9, 0.6], [[0.5], [0.5]], [[True], [True]])
        np.testing.assert_allclose(w.task_weights.numpy(), [0.6, 0.4], atol=1e-15)

    def test_equal_and_singleton(self):
        w = compute_batch_weights([0.7] * 4, np.full((4, 2), 0.8), np.ones((4, 2), bool))
        np.testing.assert_allclose(w.task_weights.numpy(), 0.25)
        np.testing.assert_allclose(w.rationale_weights.numpy(), 1 / 8)
        w = compute_batch_weights([0.55], [[0.9]], [[True]])
        assert float(w.task_weights[0]) == 1.0 and float(w.rationale_weights[0, 0]) == 1.0

    def test_rationale_weights_are_batch_global(self):
        w = compute_batch_weights([1, 1], [[0.5, 1.0], [1.0, 0.0]], [[True, True], [True, False]])
        np.testing.assert_allclose(w.rationale_weights.numpy(), [[0.2, 0.4], [0.4, 0.0]])

    def test_per_example_option(self):
        w = compute_batch_weights([1, 1], [[0.5, 1.5], [1.0, 0.0]], [[True, True], [True, False]],
                                  normalization="example")
        np.testing.assert_allclose(w.rationale_weights.numpy(), [[0.125, 0.375], [0.5, 0.0]])

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            compute_batch_weights([], np.zeros((0, 3)), np.zeros((0, 3), bool))

    def test_multipliers_applied_before_normalisation(self):
        w = compute_batch_weights([0.5, 0.5], [[1.0], [1.0]], [[True], [True]], task_multipliers=[2 / 3, 2])
        np.testing.assert_allclose(w.task_weights.numpy(), [0.25, 0.75])


def run_weight_normalization_suite(n_batches=100, seed=0):
    """Max deviation of weight sums from 1 and max change under confidence rescaling."""
    rng = np.random.default_rng(seed)
    worst_sum, worst_scale = 0.0, 0.0
    for _ in range(n_batches):
        B, L = rng.integers(1, 9), rng.integers(1, 20)
        lengths = rng.integers(1, L + 1, B)
        mask = np.arange(L)[None] < lengths[:, None]
        y = rng.uniform(0.5, 1.0, B)
        r = rng.uniform(0.5, 1.0, (B, L))
        w = compute_batch_weights(y, r, mask)
        worst_sum = max(worst_sum, abs(float(w.task_weights.sum()) - 1), abs(float(w.rationale_weights.sum()) - 1))
        c = rng.uniform(1e-3, 1e3)
        ws = compute_batch_weights(y * c, r * c, mask)
        worst_scale = max(worst_scale,
                          float((ws.task_weights - w.task_weights).abs().max()),
                          float((ws.rationale_weights - w.rationale_weights).abs().max()))
    return worst_sum, worst_scale


def test_weight_normalization_suite():
    worst_sum, worst_scale = run_weight_normalization_suite()
    assert worst_sum <= 1e-6
    assert worst_scale <= 1e-9


class TestWeightedPseudo:
    def setup_method(self):
        self.tl = logp([0.7, 0.3], [0.2, 0.8])
        self.rl = rat_logp([[0.9, 0.2], [0.3, 0.4]])
        self.y = torch.tensor([0, 0])
        self.r = torch.tensor([[1, 0], [0, 1]])
        self.dm = torch.tensor([[True, True], [True, False]])

    def test_uniform_weights_match_unweighted_mean(self):
        loss = weighted_pseudo_loss(self.tl, self.rl, self.y, self.r, uniform_batch_weights(self.dm), self.dm)
        task = (-math.log(0.7) - math.log(0.2)) / 2
        token_sums = [-math.log(0.9) - math.log(0.8), -math.log(0.7)]
        # per-example token sums scaled by B / total document tokens
        rat = sum(token_sums) / 3
        assert float(loss) == pytest.approx(task + rat, abs=1e-12)

    def test_zero_weight_example_is_ignored(self):
        w = BatchWeights(torch.tensor([1.0, 0.0], dtype=torch.float64),
                         torch.tensor([[0.5, 0.5], [0.0, 0.0]], dtype=torch.float64))
        loss = weighted_pseudo_loss(self.tl, self.rl, self.y, self.r, w, self.dm)
        tl2 = self.tl.clone()
        tl2[1] = logp([0.01, 0.99])
        assert float(weighted_pseudo_loss(tl2, self.rl, self.y, self.r, w, self.dm)) == float(loss)
        expected = -math.log(0.7) + 0.5 * (-math.log(0.9) - math.log(0.8))
        assert float(loss) == pytest.approx(expected, abs=1e-12)

    def test_confident_agreement_is_zero(self):
        tl = logp([1.0, 0.0])
        rl = rat_logp([[1.0, 0.0]])
        dm = torch.ones(1, 2, dtype=torch.bool)
        loss = weighted_pseudo_loss(tl, rl, torch.tensor([0]), torch.tensor([[1, 0]]), uniform_batch_weights(dm), dm)
        assert float(loss) == pytest.approx(0.0, abs=1e-12)

    def test_misaligned_weights(self):
        with pytest.raises(ValueError):
            weighted_pseudo_loss(self.tl, self.rl, self.y, self.r, uniform_batch_weights(torch.ones(3, 2)), self.dm)


class TestSufficiencyCompleteness:
    def test_sufficiency_examples(self):
        assert float(sufficiency_loss(logp([1.0, 0.0]), torch.tensor([0]))) == pytest.approx(0.0)
        assert float(sufficiency_loss(logp([1 / 3] * 3), torch.tensor([2]))) == pytest.approx(math.log(3))

    @torch.no_grad()
    def test_sufficiency_with_full_rationale_equals_task_term(self, rng):
        model = tiny_model()
        b = random_batch(rng)
        y = torch.tensor([0, 2, 1])
        ones = b.doc_mask.long()
        kept = model(masked_ids(b, ones, model.config.mask_token_id, True), b.attention_mask)
        full = model(b.ids, b.attention_mask)
        task_only = supervised_loss(full.task_logp, full.rationale_logp, y, ones, b.doc_mask * False)
        assert float(sufficiency_loss(kept.task_logp, y)) == pytest.approx(float(task_only), abs=1e-12)

    def test_completeness_examples(self):
        assert float(completeness_loss(logp([0.5, 0.5]))) == pytest.approx(-math.log(2), abs=1e-12)
        assert float(completeness_loss(logp([1.0, 0.0]))) == 0.0
        assert float(completeness_loss(logp([0.5, 0.25, 0.25]))) == pytest.approx(-1.5 * math.log(2), abs=1e-12)


def run_completeness_fuzz(n=1000, seed=0):
    """Number of fuzzed distributions outside ``[-ln K, 0]`` and the uniform-input gap."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(n):
        k = int(rng.integers(2, 8))
        logits = rng.normal(0, float(rng.choice([0.1, 1, 10, 100])), (int(rng.integers(1, 5)), k))
        value = float(completeness_loss(torch.log_softmax(torch.from_numpy(logits), -1)))
        if not (-math.log(k) - 1e-12 <= value <= 0.0):
            violations += 1
    gap = max(abs(float(completeness_loss(torch.log_softmax(torch.zeros(3, k, dtype=torch.float64), -1))) + math.log(k))
              for k in range(2, 10))
    return violations, gap


def test_completeness_fuzz():
    violations, gap = run_completeness_fuzz()
    assert violations == 0
    assert gap <= 1e-9


class TestCoherence:
    def test_contiguous_chunk(self):
        sp, co = coherence_terms(torch.tensor([1.0, 1, 0, 0]), normalize=False)
        assert (float(sp), float(co)) == (2.0, 1.0)
        assert float(coherence_loss(torch.tensor([1.0, 1, 0, 0]), normalize=False)) == 3.0

    def test_alternating_costs_more(self):
        assert float(coherence_loss(torch.tensor([1.0, 0, 1, 0]), normalize=False)) == 5.0

    def test_zeros(self):
        assert float(coherence_loss(torch.zeros(6))) == 0.0

    def test_length_normalised(self):
        assert float(coherence_loss(torch.tensor([1.0, 1, 0, 0]))) == 0.75

    def test_padding_is_ignored(self):
        p = torch.tensor([[1.0, 0, 1, 1], [1.0, 1, 0.3, 0.9]])
        dm = torch.tensor([[True, True, True, True], [True, True, False, False]])
        sp, co = coherence_terms(p, dm, normalize=False)
        np.testing.assert_allclose(sp.numpy(), [3, 2])
        np.testing.assert_allclose(co.numpy(), [2, 0])

    def test_empty(self):
        with pytest.raises(ValueError):
            coherence_loss(torch.zeros(0))


def brute_force_coherence_mismatches(max_n=8):
    """Count hard masks whose relaxed loss differs from the direct count."""
    mismatches = 0
    for n in range(1, max_n + 1):
        for bits in itertools.product((0, 1), repeat=n):
            size = sum(bits)
            boundaries = sum(bits[j] != bits[j - 1] for j in range(1, n))
            value = coherence_loss(torch.tensor(bits, dtype=torch.float64), normalize=False)
            if float(value) != size + boundaries:
                mismatches += 1
    return mismatches


def test_coherence_brute_force_oracle():
    assert brute_force_coherence_mismatches() == 0


class TestJointLoss:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.model = tiny_model(seed=3)
        b = random_batch(rng)
        B, L = b.ids.shape
        self.pb = PseudoBatch(b, torch.tensor([0, 2, 1]), torch.from_numpy(rng.integers(0, 2, (B, L))) * b.doc_mask,
                              torch.from_numpy(rng.uniform(0.4, 1, B)), torch.from_numpy(rng.uniform(0.5, 1, (B, L))))

    def test_all_zero(self):
        br = joint_student_loss(self.model, self.pb, LossWeights(0, 0, 0, 0, 0))
        assert float(br.total) == 0.0

    def test_wu_only_is_weighted_pseudo_loss(self):
        br = joint_student_loss(self.model, self.pb, LossWeights(1, 0, 0, 0, 0))
        b = self.pb.batch
        out = self.model(b.ids, b.attention_mask)
        w = compute_batch_weights(self.pb.y_confidence, self.pb.r_confidences, b.doc_mask)
        expected = weighted_pseudo_loss(out.task_logp, out.rationale_logp, self.pb.y_pseudo, self.pb.r_pseudo, w,
                                        b.doc_mask)
        assert br.total.item() == expected.item()

    def test_sum_of_independent_terms(self):
        br = joint_student_loss(self.model, self.pb, LossWeights())
        b, m, pb = self.pb.batch, self.model, self.pb
        out = m(b.ids, b.attention_mask)
        w = compute_batch_weights(pb.y_confidence, pb.r_confidences, b.doc_mask)
        parts = [
            weighted_pseudo_loss(out.task_logp, out.rationale_logp, pb.y_pseudo, pb.r_pseudo, w, b.doc_mask),
            sufficiency_loss(m(masked_ids(b, pb.r_pseudo, 3, True), b.attention_mask).task_logp, pb.y_pseudo),
            completeness_loss(m(masked_ids(b, pb.r_pseudo, 3, False), b.attention_mask).task_logp),
            coherence_loss(out.rationale_probs(), b.doc_mask),
        ]
        assert br.total.item() == pytest.approx(sum(p.item() for p in parts), abs=1e-10)
        assert sum(br.as_floats()[k] for k in br.terms) == pytest.approx(br.as_floats()["total"], abs=1e-12)

    def test_student_masks_reduce_to_teacher_masks_on_hard_probs(self):
        # with a saturated rationale head the soft gate equals the hard mask
        with torch.no_grad():
            self.model.rationale_head.weight.zero_()
            self.model.rationale_head.bias.copy_(torch.tensor([0.0, 60.0]))
        pb = self.pb
        ones = PseudoBatch(pb.batch, pb.y_pseudo, pb.batch.doc_mask.long(), pb.y_confidence, pb.r_confidences)
        lw = LossWeights(0, 1, 1, 0, 0)
        a = joint_student_loss(self.model, ones, lw, StudentLossOptions(mask_source="teacher")).total
        b = joint_student_loss(self.model, ones, lw, StudentLossOptions(mask_source="student")).total
        assert a.item() == pytest.approx(b.item(), abs=1e-10)

    def test_negative_coefficient_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(coef_suff=-1)
