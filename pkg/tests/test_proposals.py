import numpy as np
import pytest
import scipy.ndimage as ndi
from hypothesis import given, settings
from hypothesis import strategies as st

from thyrofna.errors import InvalidCanonicalSize, MalformedProposalFile, OutOfBoundsBox
from thyrofna.proposals import (
    Backend,
    MIN_BOX_SIDE,
    ProposerConfig,
    RegionProposal,
    dark_mask,
    load_external_proposals,
    propose_regions,
    rank_proposals,
    write_external_proposals,
)

W, H = 1024, 768


def blank():
    return np.full((H, W, 3), 230, np.uint8)


def add_blob(img, x, y, w, h):
    img[y : y + h, x : x + w] = 40


def oracle_boxes(img, config):
    """Independent route: scipy labelling of the same threshold mask."""
    labels, _ = ndi.label(dark_mask(img, config), structure=np.ones((3, 3)))
    out = []
    for k, sl in enumerate(ndi.find_objects(labels), start=1):
        if (labels[sl] == k).sum() < config.min_cluster_area:
            continue
        m = config.margin
        x0, y0 = max(0, sl[1].start - m), max(0, sl[0].start - m)
        x1, y1 = min(W, sl[1].stop + m), min(H, sl[0].stop + m)
        out.append((x0, y0, x1 - x0, y1 - y0))
    return sorted(out)


def test_region_invariants():
    with pytest.raises(OutOfBoundsBox):
        RegionProposal(0, 0, 8, 64, 0.5)
    with pytest.raises(OutOfBoundsBox):
        RegionProposal(1000, 0, 64, 64, 0.5)
    with pytest.raises(OutOfBoundsBox):
        RegionProposal(0, 0, 64, 64, 1.5)


def test_single_blob():
    img = blank()
    add_blob(img, 300, 200, 100, 80)
    props = propose_regions(img)
    assert [p.box for p in props] == [(292, 192, 116, 96)] == oracle_boxes(img, ProposerConfig())
    assert props[0].score == 1.0


def test_ten_equal_blobs_tie_order():
    img = blank()
    for i in range(10):
        add_blob(img, 20 + (i % 5) * 200, 100 + (i // 5) * 350, 80, 80)
    props = propose_regions(img)
    assert len(props) == 10
    assert sorted(p.box for p in props) == oracle_boxes(img, ProposerConfig())
    # equal scores and areas: ordered by x then y
    assert [p.box[:2] for p in props] == sorted(p.box[:2] for p in props)
    assert all(p.score == 1.0 for p in props)


def test_small_blob_dropped():
    img = blank()
    add_blob(img, 10, 10, 40, 40)  # 1600 px < 4096
    assert propose_regions(img) == []


def test_clamped_at_border():
    img = blank()
    add_blob(img, 0, 0, 90, 90)
    (p,) = propose_regions(img)
    assert p.box == (0, 0, 98, 98)


def test_non_canonical_rejected():
    with pytest.raises(InvalidCanonicalSize):
        propose_regions(np.zeros((100, 100, 3), np.uint8))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 12))
def test_fuzz_invariants_and_stability(seed, n):
    rng = np.random.default_rng(seed)
    img = rng.integers(180, 255, (H, W, 3), dtype=np.uint8)
    for _ in range(n):
        w, h = rng.integers(20, 200, 2)
        add_blob(img, int(rng.integers(0, W - w)), int(rng.integers(0, H - h)), int(w), int(h))
    props = propose_regions(img)
    assert props == propose_regions(img)
    assert props == rank_proposals(props)
    for p in props:
        assert p.w >= MIN_BOX_SIDE and p.h >= MIN_BOX_SIDE
        assert 0 <= p.x and p.x + p.w <= W and 0 <= p.y and p.y + p.h <= H
        assert 0 < p.score <= 1


def test_external_file(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("img1,0.9,100,100,512,512\n")
    table = load_external_proposals(f)
    assert table == {"img1": [RegionProposal(100, 100, 512, 512, 0.9)]}

    f.write_text("img1,0.9,100,100,8,512\n")
    with pytest.raises(OutOfBoundsBox):
        load_external_proposals(f)

    f.write_text("")
    assert load_external_proposals(f) == {}

    f.write_text("img1,high,1,2,3\n")
    with pytest.raises(MalformedProposalFile):
        load_external_proposals(f)


def test_external_round_trip(tmp_path):
    table = {"a": [RegionProposal(0, 0, 64, 64, 0.25), RegionProposal(10, 20, 300, 200, 1.0)], "b": []}
    out = load_external_proposals(write_external_proposals(table, tmp_path / "x.csv"))
    assert out["a"] == rank_proposals(table["a"])
    assert out.get("b", []) == []


def test_external_backend(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("image_id,score,x,y,w,h\nimg1,0.5,0,0,64,64\n")
    cfg = ProposerConfig(backend=Backend.EXTERNAL_FILE, proposal_file=f)
    assert len(propose_regions(blank(), cfg, "img1")) == 1
    assert propose_regions(blank(), cfg, "other") == []
