import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstpp.attention import AttentionParams, ParamFactory, multi_head_attention
from vstpp.complexity import (
    MacReport,
    attention_cost_breakdown,
    closed_form_attention_cost,
    closed_form_model_macs,
    counted_forward,
    savings_report,
    synthetic_mask,
)
from vstpp.model import SIA_LEVELS, VSTModel
from vstpp.tensor import no_grad

from conftest import tiny_config


def random_config(rng):
    d_heads = [(16, 2), (24, 3), (16, 4), (32, 2)]
    d, heads = d_heads[int(rng.integers(len(d_heads)))]
    return tiny_config(
        side=int(rng.choice([32, 48])),
        c=int(rng.choice([4, 8])),
        d=d,
        heads=heads,
        t2t_heads=int(rng.choice([1, 2])),
        convertor_layers=int(rng.choice([2, 4])),
        encoder_layers=int(rng.integers(0, 3)),
        decoder_layers=tuple(int(x) for x in rng.integers(0, 3, size=3)),
        modality=str(rng.choice(["rgb", "rgbd"])),
        sia_mode=str(rng.choice(["select", "masked"])),
        decoder_attention=str(rng.choice(["sia", "self"])),
        ffn_ratio=float(rng.choice([2.0, 4.0])),
    )


def run_counted(cfg, rng, fraction=None):
    model = VSTModel(cfg)
    image = rng.random((cfg.side, cfg.side, 3))
    depth = rng.random((cfg.side, cfg.side)) if cfg.modality == "rgbd" else None
    masks = None if fraction is None else {lv: synthetic_mask(cfg.grid(lv), fraction) for lv in SIA_LEVELS}
    with no_grad():
        preds, rep = counted_forward(model.forward, image, depth, masks=masks)
    return preds, rep


class TestBreakdown:
    def test_single_attention_call(self, rng):
        p = AttentionParams.create(ParamFactory(0, "a"), 12, 3)
        rep = MacReport()
        _, rep = counted_forward(multi_head_attention, rng.standard_normal((5, 12)), rng.standard_normal((7, 12)), p)
        assert dict(rep.counts) == attention_cost_breakdown(5, 7, 12)

    def test_full_variant(self):
        assert closed_form_attention_cost(10, 10, 4, "full", component="scores") == 2 * 12 * 12 * 4

    def test_sia_variant(self):
        assert closed_form_attention_cost(10, 3, 4, "sia", component="scores") == 2 * 12 * 6 * 4
        assert closed_form_attention_cost(10, 10, 4, "sia", background=False, component="scores") == 2 * 12 * 12 * 4

    def test_masked_variant_costs_more_than_full(self):
        assert closed_form_attention_cost(10, 3, 4, "masked") > closed_form_attention_cost(10, 3, 4, "full")

    def test_components_sum(self):
        parts = [closed_form_attention_cost(9, 4, 8, "sia", component=c) for c in ("scores", "projections")]
        assert sum(parts) == closed_form_attention_cost(9, 4, 8, "sia")

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            closed_form_attention_cost(4, 5, 8)
        with pytest.raises(ValueError):
            closed_form_attention_cost(4, 2, 8, "sparse")
        with pytest.raises(ValueError):
            closed_form_attention_cost(4, 2, 8, component="softmax")


class TestClosedFormModel:
    def test_random_configs(self):
        rng = np.random.default_rng(7)
        for _ in range(8):
            cfg = random_config(rng)
            preds, rep = run_counted(cfg, rng)
            closed = closed_form_model_macs(cfg, rep.n_foreground)
            assert rep.grouped(closed) == closed, cfg
            assert rep.total == sum(closed.values())

    def test_labels_are_scoped(self, rng):
        _, rep = run_counted(tiny_config(), rng, 0.5)
        assert any(k.startswith("decoder.level1/8.layer0.") for k in rep.counts)
        assert all(k.split(".")[0] in ("encoder", "convertor", "decoder") for k in rep.counts)

    def test_foreground_counts_recorded(self, rng):
        cfg = tiny_config()
        _, rep = run_counted(cfg, rng, 0.25)
        assert rep.n_foreground == {"1/8": 4, "1/4": 16}


class TestHookInvariance:
    def test_counting_does_not_change_outputs(self, rng):
        cfg = tiny_config()
        model = VSTModel(cfg)
        image = rng.random((32, 32, 3))
        with no_grad():
            plain = model(image)
            counted, _ = counted_forward(model.forward, image)
        np.testing.assert_array_equal(plain["1"].dense_saliency.data, counted["1"].dense_saliency.data)
        np.testing.assert_array_equal(plain["1/4"].token_boundary.data, counted["1/4"].token_boundary.data)


class TestSyntheticMask:
    def test_leading_positions(self):
        m = synthetic_mask((2, 3), 0.5)
        np.testing.assert_array_equal(m.bits, [1, 1, 1, 0, 0, 0])

    def test_fraction_range(self):
        with pytest.raises(ValueError):
            synthetic_mask((2, 2), 1.5)


class TestSavings:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(4, 400), st.floats(0, 1), st.floats(0, 1))
    def test_score_cost_monotone_in_foreground(self, l, f1, f2):
        lo, hi = sorted((int(round(f1 * l)), int(round(f2 * l))))
        a = closed_form_attention_cost(l, lo, 8, "sia", lo < l, "scores")
        b = closed_form_attention_cost(l, hi, 8, "sia", hi < l, "scores")
        assert a <= b

    def test_counted_reduction_shrinks_with_foreground(self):
        cfg = tiny_config(decoder_layers=(1, 2, 2))
        reductions = []
        for f in (0.0, 0.25, 0.5, 0.75, 1.0):
            rep = savings_report(cfg, f)
            base, sia = rep.rows["decoder.scores"]
            reductions.append(rep.reduction(base, sia))
        assert all(a > b for a, b in zip(reductions, reductions[1:]))
        assert reductions[-1] == 0.0

    def test_report_matches_prediction(self):
        rep = savings_report(tiny_config(decoder_layers=(1, 2, 2)), 0.5)
        base, sia = rep.rows["decoder.scores"]
        assert abs(rep.reduction(base, sia) - rep.predicted_score_reduction) < 1e-9
        assert "decoder.scores.reduction_pct" in rep.to_text()
        assert rep.summary()["model.total"]["sia"] < rep.summary()["model.total"]["baseline"]

    def test_baseline_ignores_masks(self):
        cfg = tiny_config()
        a = savings_report(cfg, 0.1).baseline.total
        b = savings_report(cfg, 0.9).baseline.total
        assert a == b
