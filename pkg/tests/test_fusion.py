"""Adaptive fusion: identity at init, ablation modes, parameter accounting."""

import pytest
import torch

from sounddiff.fusion import AdaptiveFusion, FusionMode, fusion_param_count

DIM = 16
Q = 4


def _streams(batch=2, dim=DIM, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (
        torch.randn(batch, 50, dim, generator=g),
        torch.randn(batch, 32, dim, generator=g),
        torch.randn(batch, 50, dim, generator=g),
    )


def _randomize(module, seed=1):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * 0.3)
    return module


class TestIdentityAtInit:
    def test_full_mode_is_bitwise_identity(self):
        torch.manual_seed(0)
        fusion = AdaptiveFusion(DIM, queries=Q)
        hv, ht, ha = _streams()
        rv, rt, ra, hc = fusion(hv, ht, ha, mode=FusionMode.FULL)
        assert torch.equal(rv, hv) and torch.equal(rt, ht) and torch.equal(ra, ha)
        assert torch.equal(hc, torch.cat([hv, ht, ha], dim=1))

    def test_off_mode_identity_for_arbitrary_params(self):
        fusion = _randomize(AdaptiveFusion(DIM, queries=Q))
        hv, ht, ha = _streams(seed=2)
        rv, rt, ra, hc = fusion(hv, ht, ha, mode=FusionMode.OFF)
        assert torch.equal(rv, hv) and torch.equal(rt, ht) and torch.equal(ra, ha)
        assert torch.equal(hc, torch.cat([hv, ht, ha], dim=1))

    def test_off_equals_full_with_zeroed_outputs(self):
        fusion = _randomize(AdaptiveFusion(DIM, queries=Q), seed=5)
        with torch.no_grad():
            for proj in fusion.out_projs.values():
                proj.weight.zero_()
                proj.bias.zero_()
        hv, ht, ha = _streams(seed=3)
        full = fusion(hv, ht, ha, mode=FusionMode.FULL)
        off = fusion(hv, ht, ha, mode=FusionMode.OFF)
        for a, b in zip(full, off):
            assert torch.equal(a, b)


class TestZeroInput:
    def test_zero_inputs_zero_biases_give_zero_fused(self):
        fusion = _randomize(AdaptiveFusion(DIM, queries=Q), seed=7)
        with torch.no_grad():
            for name, p in fusion.named_parameters():
                if name.endswith(".bias"):
                    p.zero_()
        zeros = (torch.zeros(1, 50, DIM), torch.zeros(1, 32, DIM), torch.zeros(1, 50, DIM))
        for mode in (FusionMode.FULL, FusionMode.NO_GATE, FusionMode.NO_QUERY):
            _, _, _, hc = fusion(*zeros, mode=mode)
            assert torch.all(hc == 0.0), mode


class TestShapesAndGates:
    def test_token_counts_preserved(self):
        fusion = _randomize(AdaptiveFusion(DIM, queries=Q), seed=9)
        hv, ht, ha = _streams(seed=4)
        for mode in FusionMode:
            rv, rt, ra, hc = fusion(hv, ht, ha, mode=mode)
            assert rv.shape == hv.shape and rt.shape == ht.shape and ra.shape == ha.shape
            assert hc.shape == (hv.shape[0], 132, DIM)

    def test_gate_range_open_interval(self):
        fusion = _randomize(AdaptiveFusion(DIM, queries=Q), seed=11)
        hv, ht, ha = _streams(seed=5)
        acts = fusion.gate_activations({"video": hv, "text": ht, "audio": ha})
        for act in acts.values():
            assert torch.all(act > 0.0) and torch.all(act < 1.0)

    def test_shape_mismatch_rejected(self):
        fusion = AdaptiveFusion(DIM, queries=Q)
        hv, ht, ha = _streams()
        with pytest.raises(ValueError):
            fusion(hv[..., :8], ht, ha)


class TestParamCount:
    def test_hand_counted_total_d2_q1(self):
        fusion = AdaptiveFusion(2, queries=1)
        # 17 square projections with bias (gates 3, cross 4, self 4, dispatch 3,
        # outputs 3) plus 3 query sets of q x d
        assert fusion_param_count(fusion) == 17 * (2 * 2 + 2) + 3 * 1 * 2

    def test_doubling_queries_adds_query_scalars_only(self):
        base = fusion_param_count(AdaptiveFusion(DIM, queries=Q))
        doubled = fusion_param_count(AdaptiveFusion(DIM, queries=2 * Q))
        assert doubled - base == 3 * Q * DIM

    def test_mode_is_runtime_storage_unchanged(self):
        fusion = AdaptiveFusion(DIM, queries=Q)
        before = fusion_param_count(fusion)
        fusion(*_streams(), mode=FusionMode.OFF)
        assert fusion_param_count(fusion) == before


class TestGradientFlow:
    def test_all_params_get_gradient_after_one_step(self):
        torch.manual_seed(0)
        fusion = AdaptiveFusion(DIM, queries=Q)
        hv, ht, ha = _streams(seed=8)

        def loss_of():
            rv, rt, ra, hc = fusion(hv, ht, ha, mode=FusionMode.FULL)
            return hc.pow(2).mean() + (rv.mean() - 1).pow(2)

        # one step so the zero-initialized output projections become nonzero
        loss = loss_of()
        loss.backward()
        with torch.no_grad():
            for p in fusion.parameters():
                if p.grad is not None:
                    p.add_(-0.1 * p.grad)
        fusion.zero_grad()
        loss_of().backward()
        for name, p in fusion.named_parameters():
            assert p.grad is not None
            assert torch.any(p.grad != 0.0), f"{name} has identically-zero gradient"
