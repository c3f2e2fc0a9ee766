import re
from xml.etree import ElementTree

from memescope.report import HeadOverlay, ReportDocument, overlay_svg, render_html, word_colors


def test_word_colors_sign_and_intensity():
    out = word_colors([("goat", 2.0), ("truck", -1.0), ("the", 0.0), ("a", 0.01)])
    assert out[0].color.startswith("rgba(0,150,60") and out[0].intensity == 1.0
    assert out[1].color.startswith("rgba(200,30,30") and out[1].intensity == 0.5
    assert out[2].color == "none"
    assert out[3].intensity == 0.15  # floor keeps faint words visible


def test_all_zero_scores_are_neutral():
    assert all(w.color == "none" for w in word_colors([("a", 0.0), ("b", 0.0)]))


def test_overlay_svg_is_well_formed_and_scaled():
    ov = HeadOverlay(0, 2, 0.6, [3, 1], [0.6, 0.2], [[0.1, 0.2, 0.5, 0.6], [0.0, 0.0, 1.0, 1.0]])
    svg = overlay_svg(ov)
    root = ElementTree.fromstring(svg)
    rects = [e for e in root.iter() if e.tag.endswith("rect")]
    assert len(rects) == 3  # background + two boxes
    strongest = [r for r in rects if r.get("x") == "100.0"][0]
    assert strongest.get("width") == "400.0" and strongest.get("stroke-opacity") == "1.000"
    assert "layer 1 / head 3" in svg


def test_render_html_is_self_contained_and_escaped():
    doc = ReportDocument(
        record_id="m<1>",
        text="a <b>goat</b>",
        gold_label="hateful",
        predicted_label="non-hateful",
        p_hateful=0.25,
        words=word_colors([("<b>goat</b>", 1.0)]),
        heads=[HeadOverlay(1, 0, 0.4, [0], [0.4], [[0, 0, 0.5, 0.5]])],
        keyword="goat",
        modality=(1.5, 2.5),
        method="integrated-gradients",
        diagnostics={"completeness_delta": 1.5e-7},
    )
    page = render_html(doc)
    assert "<b>goat</b>" not in page and "&lt;b&gt;goat&lt;/b&gt;" in page
    assert not re.search(r"(src|href)=\"https?:", page)
    assert "<script" not in page
    assert "1.500e-07" in page and "non-hateful" in page


def test_render_is_deterministic():
    doc = ReportDocument("x", "t", "hateful", "hateful", 0.9, words=word_colors([("t", 0.3)]))
    assert render_html(doc) == render_html(doc)
