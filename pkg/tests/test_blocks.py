"""Composite block semantics: manual composition oracles and bound laws."""

import numpy as np
import pytest

from ahmf import tensor as T
from ahmf.blocks import (
    Bhfc,
    Conv,
    ConvGruCell,
    Feb,
    FeatureExtractor,
    Frb,
    GuidanceDown,
    Mmaf,
    ParameterStore,
    ResBlock,
)
from ahmf.model import ModelConfig
from ahmf.tensor import Tensor

F32 = np.float32


def rand_t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape).astype(F32))


def mini_cfg(**kw):
    kw.setdefault("scale", 4)
    kw.setdefault("depth", 2)
    kw.setdefault("width", 4)
    return ModelConfig(**kw)


class TestParameterStore:
    def test_rejects_duplicate_names(self):
        store = ParameterStore()
        store.register("a", Tensor(np.zeros((1, 1, 1, 1), F32), requires_grad=True))
        with pytest.raises(ValueError, match="twice"):
            store.register("a", Tensor(np.zeros((1, 1, 1, 1), F32), requires_grad=True))

    def test_insertion_order_preserved(self):
        store = ParameterStore()
        for name in ("z", "a", "m"):
            store.register(name, Tensor(np.zeros((1, 1, 1, 1), F32), requires_grad=True))
        assert store.names() == ["z", "a", "m"]


class TestFeb:
    def test_equals_manual_composition(self):
        rng = np.random.default_rng(0)
        store = ParameterStore()
        feb = Feb(store, "feb", 4, rng, F32)
        x = rand_t(rng, (2, 4, 5, 5))
        got = feb(x).data
        want = T.mul(
            T.prelu(feb.value(x), feb.value_act.slope), T.sigmoid(feb.gate(x))
        ).data
        assert np.array_equal(got, want)

    def test_saturated_gate_blocks_output(self):
        rng = np.random.default_rng(1)
        store = ParameterStore()
        feb = Feb(store, "feb", 4, rng, F32)
        feb.gate.bias.data = np.full((1, 4, 1, 1), -20.0, F32)
        feb.gate.weight.data = np.zeros_like(feb.gate.weight.data)
        x = rand_t(rng, (1, 4, 6, 6))
        assert np.abs(feb(x).data).max() < 1e-3

    def test_output_bounded_by_value_path(self):
        rng = np.random.default_rng(2)
        store = ParameterStore()
        feb = Feb(store, "feb", 4, rng, F32)
        x = rand_t(rng, (1, 4, 6, 6))
        value = T.prelu(feb.value(x), feb.value_act.slope).data
        assert np.all(np.abs(feb(x).data) <= np.abs(value) + 1e-7)


class TestFrb:
    def test_scalar_fusion_oracle(self):
        # excitation 0.5 on both paths, features 2 and 4 -> 0.5*0.5*2 + 0.5*0.5*4 = 1.5
        rng = np.random.default_rng(3)
        store = ParameterStore()
        frb = Frb(store, "frb", 1, rng, F32)
        for conv in (frb.excite_d, frb.excite_y):
            conv.weight.data = np.zeros_like(conv.weight.data)  # sigmoid(0) = 0.5
            conv.bias.data = np.zeros_like(conv.bias.data)
        fd = Tensor(np.full((1, 1, 2, 2), 2.0, F32))
        fy = Tensor(np.full((1, 1, 2, 2), 4.0, F32))
        np.testing.assert_allclose(frb(fd, fy).data, 1.5, atol=1e-6)

    def test_tied_excitations_factor(self):
        rng = np.random.default_rng(4)
        store = ParameterStore()
        frb = Frb(store, "frb", 3, rng, F32)
        frb.excite_y.weight.data = frb.excite_d.weight.data.copy()
        frb.excite_y.bias.data = frb.excite_d.bias.data.copy()
        fd = rand_t(rng, (1, 3, 4, 4))
        fy = rand_t(rng, (1, 3, 4, 4))
        got = frb(fd, fy).data
        joint = frb.squeeze_act(frb.squeeze(T.concat_channels([fd, fy])))
        embed = T.add(T.global_avg_pool(joint), T.global_var_pool(joint))
        gate = T.sigmoid(frb.excite_d(embed))
        want = T.mul(gate, T.scale(T.add(fd, fy), 0.5)).data
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_gate_bound(self, seed):
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        frb = Frb(store, "frb", 4, rng, F32)
        fd = rand_t(rng, (2, 4, 5, 5), -3, 3)
        fy = rand_t(rng, (2, 4, 5, 5), -3, 3)
        out = np.abs(frb(fd, fy).data)
        bound = 0.5 * (np.abs(fd.data) + np.abs(fy.data))
        assert np.all(out <= bound + 1e-6)


class TestMmaf:
    def test_equals_feb_frb_composition(self):
        rng = np.random.default_rng(5)
        store = ParameterStore()
        mmaf = Mmaf(store, "mmaf.0", 4, rng, F32)
        fd = rand_t(rng, (1, 4, 6, 6))
        fy = rand_t(rng, (1, 4, 6, 6))
        got = mmaf(fd, fy).data
        want = mmaf.frb(mmaf.feb_d(fd), mmaf.feb_y(fy)).data
        assert np.array_equal(got, want)

    def test_output_dims_match_input(self):
        rng = np.random.default_rng(6)
        store = ParameterStore()
        mmaf = Mmaf(store, "mmaf.0", 4, rng, F32)
        fd = rand_t(rng, (2, 4, 5, 7))
        assert mmaf(fd, rand_t(rng, (2, 4, 5, 7))).shape == (2, 4, 5, 7)

    def test_levels_have_disjoint_parameter_names(self):
        rng = np.random.default_rng(7)
        store = ParameterStore()
        Mmaf(store, "mmaf.0", 4, rng, F32)
        Mmaf(store, "mmaf.1", 4, rng, F32)
        zero = [n for n in store.names() if n.startswith("mmaf.0.")]
        one = [n for n in store.names() if n.startswith("mmaf.1.")]
        assert zero and one and not set(zero) & set(one)
        assert len(zero) + len(one) == len(store)


class TestConvGru:
    def test_zero_parameters_zero_state(self):
        store = ParameterStore()
        rng = np.random.default_rng(8)
        cell = ConvGruCell(store, "gru", 3, rng, F32)
        for name, p in store.items():
            p.data = np.zeros_like(p.data)
        h = Tensor(np.zeros((1, 3, 4, 4), F32))
        f = rand_t(rng, (1, 3, 4, 4))
        out = cell.step(h, f)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_saturated_update_gate_keeps_state(self):
        rng = np.random.default_rng(9)
        store = ParameterStore()
        cell = ConvGruCell(store, "gru", 3, rng, F32)
        cell.update.bias.data = np.full((1, 3, 1, 1), -20.0, F32)
        cell.update.weight.data = np.zeros_like(cell.update.weight.data)
        h = rand_t(rng, (1, 3, 4, 4))
        out = cell.step(h, rand_t(rng, (1, 3, 4, 4)))
        assert np.abs(out.data - h.data).max() < 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_hidden_stays_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        cell = ConvGruCell(store, "gru", 3, rng, F32)
        h = Tensor(np.zeros((1, 3, 4, 4), F32))
        for _ in range(4):
            h = cell.step(h, rand_t(rng, (1, 3, 4, 4), -3, 3))
            assert h.data.min() >= -1.0 and h.data.max() <= 1.0


class TestResBlock:
    def test_zero_convs_identity(self):
        rng = np.random.default_rng(10)
        store = ParameterStore()
        block = ResBlock(store, "res", 3, rng, F32)
        block.conv1.weight.data = np.zeros_like(block.conv1.weight.data)
        block.conv2.weight.data = np.zeros_like(block.conv2.weight.data)
        x = rand_t(rng, (1, 3, 5, 5))
        assert np.array_equal(block(x).data, x.data)

    def test_equals_manual_composition(self):
        rng = np.random.default_rng(11)
        store = ParameterStore()
        block = ResBlock(store, "res", 3, rng, F32)
        x = rand_t(rng, (1, 3, 5, 5))
        want = T.add(x, block.conv2(block.act(block.conv1(x)))).data
        assert np.array_equal(block(x).data, want)

    def test_skip_contributes_unit_gradient(self):
        rng = np.random.default_rng(12)
        store = ParameterStore()
        block = ResBlock(store, "res", 2, rng, F32)
        block.conv1.weight.data = np.zeros_like(block.conv1.weight.data)
        block.conv2.weight.data = np.zeros_like(block.conv2.weight.data)
        x = Tensor(rng.uniform(-1, 1, (1, 2, 3, 3)).astype(F32), requires_grad=True)
        T.backward(T.sum_all(block(x)))
        np.testing.assert_allclose(x.grad, 1.0)


class TestBhfc:
    def test_single_level_base_case(self):
        rng = np.random.default_rng(13)
        store = ParameterStore()
        cfg = mini_cfg(depth=1, width=3)
        bhfc = Bhfc(store, rng, cfg, F32)
        f = rand_t(rng, (1, 3, 4, 4))
        got = bhfc([f])[0].data
        zero = Tensor(np.zeros((1, 3, 4, 4), F32))
        h_f = bhfc.fgru.step(zero, f)
        h_b = bhfc.bgru.step(Tensor(np.zeros((1, 3, 4, 4), F32)), f)
        want = bhfc.res[0](T.add(h_f, h_b)).data
        assert np.array_equal(got, want)

    def test_reversed_input_swaps_directions(self):
        rng = np.random.default_rng(14)
        store = ParameterStore()
        cfg = mini_cfg(depth=3, width=2)
        bhfc = Bhfc(store, rng, cfg, F32)
        feats = [rand_t(rng, (1, 2, 3, 3)) for _ in range(3)]
        fwd_states = bhfc._scan(bhfc.fgru, feats)
        fwd_on_reversed = bhfc._scan(bhfc.fgru, feats[::-1])
        # scanning reversed input with the same cell mirrors the trajectory
        bhfc.bgru.update.weight.data = bhfc.fgru.update.weight.data.copy()
        bhfc.bgru.update.bias.data = bhfc.fgru.update.bias.data.copy()
        bhfc.bgru.reset.weight.data = bhfc.fgru.reset.weight.data.copy()
        bhfc.bgru.reset.bias.data = bhfc.fgru.reset.bias.data.copy()
        bhfc.bgru.cand.weight.data = bhfc.fgru.cand.weight.data.copy()
        bhfc.bgru.cand.bias.data = bhfc.fgru.cand.bias.data.copy()
        bwd_states = bhfc._scan(bhfc.bgru, feats[::-1])
        for a, b in zip(bwd_states, fwd_on_reversed):
            assert np.array_equal(a.data, b.data)
        # and differs from the forward trajectory on the original order
        assert not np.array_equal(fwd_states[-1].data, bwd_states[-1].data)

    def test_output_list_shape(self):
        rng = np.random.default_rng(15)
        store = ParameterStore()
        cfg = mini_cfg(depth=4, width=2)
        bhfc = Bhfc(store, rng, cfg, F32)
        feats = [rand_t(rng, (2, 2, 3, 5)) for _ in range(4)]
        out = bhfc(feats)
        assert len(out) == 4 and all(o.shape == (2, 2, 3, 5) for o in out)

    def test_pairing_uses_states_after_level_consumed(self):
        rng = np.random.default_rng(16)
        store = ParameterStore()
        cfg = mini_cfg(depth=3, width=2)
        bhfc = Bhfc(store, rng, cfg, F32)
        feats = [rand_t(rng, (1, 2, 3, 3)) for _ in range(3)]
        fwd = bhfc._scan(bhfc.fgru, feats)
        rev = bhfc._scan(bhfc.bgru, feats[::-1])
        got = bhfc(feats)
        for i in range(3):
            want = bhfc.res[i](T.add(fwd[i], rev[2 - i])).data
            assert np.array_equal(got[i].data, want)

    def test_per_step_cells_when_not_shared(self):
        rng = np.random.default_rng(17)
        store = ParameterStore()
        cfg = mini_cfg(depth=3, width=2, gru_shared=False)
        Bhfc(store, rng, cfg, F32)
        names = store.names()
        assert any("fgru.step0" in n for n in names)
        assert any("fgru.step2" in n for n in names)


class TestFeatureExtractor:
    def test_single_layer_base_case(self):
        rng = np.random.default_rng(30)
        store = ParameterStore()
        extract = FeatureExtractor(store, rng, mini_cfg(depth=1, width=4), F32)
        d = rand_t(rng, (1, 1, 6, 6))
        y = rand_t(rng, (1, 4, 6, 6))
        fds, fys = extract(d, y)
        assert len(fds) == len(fys) == 1
        conv, act = extract.depth_layers[0]
        assert np.array_equal(fds[0].data, act(conv(d)).data)

    def test_layer2_equals_manual_composition(self):
        rng = np.random.default_rng(31)
        store = ParameterStore()
        extract = FeatureExtractor(store, rng, mini_cfg(depth=2, width=4), F32)
        d = rand_t(rng, (1, 1, 6, 6))
        y = rand_t(rng, (1, 4, 6, 6))
        fds, fys = extract(d, y)
        (c1, a1), (c2, a2) = extract.guide_layers
        want = a2(c2(a1(c1(y)))).data
        assert np.array_equal(fys[1].data, want)

    def test_all_levels_keep_shape(self):
        rng = np.random.default_rng(32)
        store = ParameterStore()
        extract = FeatureExtractor(store, rng, mini_cfg(depth=3, width=5), F32)
        fds, fys = extract(rand_t(rng, (2, 1, 4, 7)), rand_t(rng, (2, 5, 4, 7)))
        assert all(t.shape == (2, 5, 4, 7) for t in fds + fys)


class TestReconstructor:
    def test_stage_counts_per_scale(self):
        from ahmf.blocks import Reconstructor

        for scale, stages in ((4, 2), (8, 3), (16, 4)):
            rng = np.random.default_rng(scale)
            store = ParameterStore()
            recon = Reconstructor(store, rng, mini_cfg(scale=scale, width=4), F32)
            assert len(recon.stages) == stages

    def test_zero_out_conv_passes_residual_through(self):
        from ahmf.blocks import Reconstructor

        rng = np.random.default_rng(33)
        store = ParameterStore()
        cfg = mini_cfg(depth=2, width=4)
        recon = Reconstructor(store, rng, cfg, F32)
        feats = [rand_t(rng, (1, 4, 4, 4)) for _ in range(2)]
        residual = rand_t(rng, (1, 1, 16, 16))
        out = recon(feats, residual)
        assert np.array_equal(out.data, residual.data)


class TestGuidanceDown:
    def test_output_shape_contract(self):
        for scale in (4, 8, 16):
            rng = np.random.default_rng(scale)
            store = ParameterStore()
            cfg = mini_cfg(scale=scale, width=4)
            down = GuidanceDown(store, rng, cfg, F32)
            y = rand_t(rng, (2, 3, 2 * scale, 3 * scale))
            assert down(y).shape == (2, 4, 2, 3)

    def test_stage_count_matches_log2_scale(self):
        rng = np.random.default_rng(20)
        store = ParameterStore()
        down = GuidanceDown(store, rng, mini_cfg(scale=4, width=4), F32)
        assert len(down.stages) == 2

    def test_identity_stage_equals_raw_rearrangement(self):
        # 1x1 stage convs that pick channel c from the 4c rearranged stack
        rng = np.random.default_rng(21)
        store = ParameterStore()
        cfg = mini_cfg(scale=4, width=4)
        down = GuidanceDown(store, rng, cfg, F32)
        for conv, act in down.stages:
            w = np.zeros_like(conv.weight.data)
            for c in range(4):
                w[c, c, 0, 0] = 1.0
            conv.weight.data = w
            conv.bias.data = np.zeros_like(conv.bias.data)
            act.slope.data = np.full((1, 1, 1, 1), 0.25, F32)
        y = rand_t(rng, (1, 3, 16, 16))
        expanded = down.expand(y)
        manual = expanded
        slope = Tensor(np.full((1, 1, 1, 1), 0.25, F32))
        for _ in range(2):
            rearranged = T.inverse_pixel_shuffle(manual, 2)
            picked = Tensor(rearranged.data[:, :4].copy())
            manual = T.prelu(picked, slope)
        assert np.array_equal(down(y).data, manual.data)
