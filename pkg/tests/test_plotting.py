import numpy as np
from PIL import Image

from kcvision import evalkit, plotting


def _is_png(path):
    with Image.open(path) as im:
        return im.format == "PNG" and im.size[0] > 100


def test_all_figures_render(tmp_path):
    rng = np.random.default_rng(0)
    sim = rng.random((20, 20))
    res = {"ann": evalkit.recall_at_k(sim), "sad": evalkit.recall_at_k(-sim)}
    paths = [
        plotting.similarity_figure(sim, tmp_path / "s.png", split=10),
        plotting.similarity_figure(-sim, tmp_path / "neg.png"),
        plotting.recall_figure(res, tmp_path / "r.png"),
        plotting.accuracy_figure({"a": [0.5, 0.6], "untrained": [0.3, 0.35]},
                                 tmp_path / "a.png"),
        plotting.selectivity_figure(rng.random(1024), tmp_path / "si.png"),
        plotting.kc_code_figure(rng.random((3, 1024)), tmp_path / "sub" / "kc.png"),
    ]
    assert all(_is_png(p) for p in paths)


def test_figures_are_byte_identical_across_renders(tmp_path):
    sim = np.random.default_rng(1).random((8, 8))
    a = plotting.similarity_figure(sim, tmp_path / "a.png")
    b = plotting.similarity_figure(sim, tmp_path / "b.png")
    assert open(a, "rb").read() == open(b, "rb").read()
