"""Core geometry, element, and config behavior."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radm.core import (
    BACKGROUND_INDEX,
    BBox,
    CLASS_TO_INDEX,
    Element,
    ElementClass,
    INDEX_TO_CLASS,
    Layout,
    MIN_BOX_SIZE,
    ModelConfig,
    PosterSample,
    box_intersection_area,
    box_iou,
    clamp_box,
)

finite01 = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestBBox:
    def test_to_corners_example(self):
        x1, y1, x2, y2 = BBox(0.3, 0.5, 0.1, 0.1).to_corners()
        assert (x1, y1, x2, y2) == pytest.approx((0.25, 0.45, 0.35, 0.55), abs=1e-12)

    def test_corner_round_trip(self):
        b = BBox(0.31, 0.62, 0.25, 0.125)
        r = BBox.from_corners(*b.to_corners())
        for got, want in zip(r.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, abs=1e-9)

    @given(finite01, finite01, finite01, finite01)
    def test_round_trip_property(self, cx, cy, w, h):
        b = BBox(cx, cy, w, h)
        r = BBox.from_corners(*b.to_corners())
        for got, want in zip(r.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, abs=1e-9)

    def test_area(self):
        assert BBox(0.5, 0.5, 0.5, 0.25).area() == pytest.approx(0.125)

    def test_is_valid(self):
        assert BBox(0.5, 0.5, 0.2, 0.2).is_valid()
        assert not BBox(0.5, 0.5, -0.1, 0.2).is_valid()  # negative width
        assert not BBox(1.2, 0.5, 0.2, 0.2).is_valid()   # right edge past 1
        assert not BBox(float("nan"), 0.5, 0.2, 0.2).is_valid()


class TestClampBox:
    def test_overhang_right_edge_exact(self):
        c = clamp_box(BBox(1.2, 0.5, 0.2, 0.2))
        x1, y1, x2, y2 = c.to_corners()
        assert x2 == 1.0  # exact, not approximately
        assert c.w == pytest.approx(0.2, abs=1e-12)  # size kept, box slid inside
        assert (y1, y2) == pytest.approx((0.4, 0.6), abs=1e-12)

    def test_negative_width_floors_to_min(self):
        c = clamp_box(BBox(0.5, 0.5, -0.1, 0.2))
        assert c.w == MIN_BOX_SIZE
        assert c.h == pytest.approx(0.2, abs=1e-12)
        assert c.is_valid()

    def test_valid_box_unchanged(self):
        b = BBox(0.5, 0.5, 0.25, 0.125)
        c = clamp_box(b)
        for got, want in zip(c.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, abs=1e-12)

    @given(
        st.floats(min_value=-2, max_value=3, allow_nan=False),
        st.floats(min_value=-2, max_value=3, allow_nan=False),
        st.floats(min_value=-1, max_value=2, allow_nan=False),
        st.floats(min_value=-1, max_value=2, allow_nan=False),
    )
    def test_idempotent_and_valid(self, cx, cy, w, h):
        once = clamp_box(BBox(cx, cy, w, h))
        assert once.is_valid()
        twice = clamp_box(once)
        assert twice.as_tuple() == once.as_tuple()


class TestIoU:
    def test_identical(self):
        b = BBox(0.5, 0.5, 0.4, 0.2)
        assert box_iou(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert box_iou(BBox(0.2, 0.2, 0.2, 0.2), BBox(0.8, 0.8, 0.2, 0.2)) == 0.0

    def test_half_overlap_oracle(self):
        # [0,.2]x[0,.2] vs [.1,.3]x[0,.2]: inter=.1*.2=.02, union=.08-.02=.06
        a = BBox(0.1, 0.1, 0.2, 0.2)
        b = BBox(0.2, 0.1, 0.2, 0.2)
        assert box_intersection_area(a, b) == pytest.approx(0.02, abs=1e-12)
        assert box_iou(a, b) == pytest.approx(0.02 / 0.06, abs=1e-12)

    def test_zero_area_boxes(self):
        assert box_iou(BBox(0.5, 0.5, 0.0, 0.0), BBox(0.5, 0.5, 0.0, 0.0)) == 0.0


class TestClasses:
    def test_background_is_last_index(self):
        assert BACKGROUND_INDEX == 4
        assert CLASS_TO_INDEX[ElementClass.BACKGROUND] == 4
        assert INDEX_TO_CLASS[0] is ElementClass.LOGO

    def test_round_trip_names(self):
        for cls in ElementClass:
            assert ElementClass.from_name(cls.value) is cls

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="banner"):
            ElementClass.from_name("banner")


class TestElementAndLayout:
    def test_score_range_enforced(self):
        with pytest.raises(ValueError):
            Element(box=BBox(0.5, 0.5, 0.2, 0.2), cls=ElementClass.TEXT, score=1.5)

    def test_background_not_serializable(self):
        el = Element(box=BBox(0.5, 0.5, 0.2, 0.2), cls=ElementClass.BACKGROUND)
        with pytest.raises(ValueError):
            el.to_json_dict()

    def test_layout_json_schema(self):
        layout = Layout(
            elements=(
                Element(BBox(0.5, 0.1, 0.2, 0.1), ElementClass.LOGO, 0.9),
                Element(BBox(0.5, 0.6, 0.6, 0.15), ElementClass.TEXT, 0.8),
            ),
            canvas_w=400,
            canvas_h=600,
        )
        d = json.loads(layout.to_json())
        assert d["canvas"] == [400, 600]
        assert [e["cls"] for e in d["elements"]] == ["logo", "text"]
        assert d["elements"][0]["box"] == pytest.approx([0.5, 0.1, 0.2, 0.1])
        assert d["elements"][1]["score"] == pytest.approx(0.8)

    def test_layout_json_round_trip(self):
        layout = Layout(
            elements=(
                Element(BBox(0.25, 0.75, 0.125, 0.0625), ElementClass.UNDERLAY, 0.5),
            ),
            canvas_w=123,
            canvas_h=456,
        )
        back = Layout.from_json(layout.to_json())
        assert back.canvas_w == 123 and back.canvas_h == 456
        assert back.elements[0].cls is ElementClass.UNDERLAY
        assert back.elements[0].box.as_tuple() == pytest.approx(
            layout.elements[0].box.as_tuple()
        )

    def test_of_class(self):
        layout = Layout(
            elements=(
                Element(BBox(0.5, 0.1, 0.2, 0.1), ElementClass.TEXT),
                Element(BBox(0.5, 0.6, 0.6, 0.15), ElementClass.TEXT),
                Element(BBox(0.5, 0.6, 0.7, 0.2), ElementClass.UNDERLAY),
            ),
            canvas_w=1,
            canvas_h=1,
        )
        assert len(layout.of_class(ElementClass.TEXT)) == 2
        assert len(layout.of_class(ElementClass.LOGO)) == 0


class TestPosterSample:
    def test_validation(self):
        img = np.zeros((10, 8, 3), dtype=np.uint8)
        sal = np.zeros((10, 8), dtype=np.float64)
        s = PosterSample(id="a", image=img, saliency=sal, slogans=("hi",), gt=None)
        assert s.id == "a"
        with pytest.raises(ValueError):
            PosterSample(id="b", image=img, saliency=np.zeros((9, 8)), gt=None)
        with pytest.raises(ValueError):
            PosterSample(
                id="c", image=img.astype(np.float32), saliency=sal, gt=None
            )


class TestModelConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.n_queries == 16
        assert cfg.num_classes == 5
        assert cfg.diffusion_steps == 1000

    def test_json_round_trip(self):
        cfg = ModelConfig(n_queries=8, roi_channels=32)
        back = ModelConfig.from_json_dict(cfg.to_json_dict())
        assert back == cfg

    def test_digest_stable_and_sensitive(self):
        a, b = ModelConfig(), ModelConfig()
        assert a.digest() == b.digest()
        assert ModelConfig(n_queries=8).digest() != a.digest()

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ModelConfig(n_queries=0)
        with pytest.raises(ValueError):
            ModelConfig(geo_embed_dim=30)  # must be divisible by 8
        with pytest.raises(ValueError):
            ModelConfig(num_classes=4)

    def test_math_sanity(self):
        # sanity anchor for the signal domain used throughout
        assert math.isclose(ModelConfig().signal_scale, 1.0)
