import xml.etree.ElementTree as ET

import numpy as np
import pytest

from regionscope.errors import DegenerateError
from regionscope.net import Layer, MlpNetwork, init_mlp
from regionscope.regions import RegionSet, extract_exact, rectangle
from regionscope.render import parse_svg_regions, pattern_color, render_svg

NS = "{http://www.w3.org/2000/svg}"
UNIT = rectangle(0.0, 0.0, 1.0, 1.0)


def oracle_paths(svg):
    root = ET.fromstring(svg.encode())
    out = []
    for el in root.iter(NS + "path"):
        if el.get("class") != "region":
            continue
        nums = [float(t) for t in el.get("d").replace("M", " ").replace("L", " ").replace("Z", " ").replace(",", " ").split()]
        out.append(np.array(nums).reshape(-1, 2))
    return root, out


def test_single_region_covers_domain():
    net = MlpNetwork([Layer(np.eye(2), np.ones(2), relu=True)])
    svg = render_svg(extract_exact(net, UNIT))
    root, paths = oracle_paths(svg)
    assert root.tag == NS + "svg" and root.get("version") == "1.1"
    assert len(paths) == 1 and np.array_equal(paths[0], UNIT)


def test_four_region_fixture():
    net = MlpNetwork([Layer(np.eye(2), np.array([-0.5, -0.5]), relu=True)])
    rs = extract_exact(net, UNIT)
    _, paths = oracle_paths(render_svg(rs))
    assert len(paths) == 4
    for p, r in zip(paths, rs.to_json()["regions"]):
        assert np.array_equal(p, np.array(r["vertices"]))


def test_round_trip_random_tessellation():
    rs = extract_exact(init_mlp([2, 12, 12], np.random.default_rng(3)), rectangle(-1, -1, 1, 1))
    svg = render_svg(rs, title="demo <x>")
    _, paths = oracle_paths(svg)
    assert len(paths) == len(rs.regions)
    worst = max(np.abs(p - r.vertices).max() for p, r in zip(paths, rs.regions))
    assert worst <= 1e-6
    assert all(np.array_equal(a, b) for a, b in zip(parse_svg_regions(svg), paths))


def test_colors_deterministic_and_no_stroke():
    assert pattern_color(b"\x01") == pattern_color(b"\x01")
    assert pattern_color(b"\x01") != pattern_color(b"\x02")
    rs = extract_exact(MlpNetwork([Layer(np.eye(2), np.array([-0.5, -0.5]), relu=True)]), UNIT)
    assert 'stroke="none"' in render_svg(rs, stroke=False)
    assert render_svg(rs) == render_svg(rs)


def test_empty_set_rejected():
    with pytest.raises(DegenerateError):
        render_svg(RegionSet(UNIT, []))
