import numpy as np
import pytest

from sidynamics import svg
from sidynamics.dynamics import OptimizerConfig, run
from sidynamics.jumps import delta_envelopes, fit_envelopes, segment_phases
from sidynamics.objectives import ToyRational

X0 = np.array([0.01, 1.0])


@pytest.fixture(scope="module")
def periodic():
    tr = run(ToyRational(), OptimizerConfig(eta=1.0, lam=0.01, steps=2000), X0)
    return tr, tr.columns


def polylines(text):
    return text.count("<polyline")


class TestChart:
    def test_render_basic(self):
        text = svg.Chart("demo").add([0, 1, 2], [1.0, 4.0, 2.0], "y").render()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert polylines(text) == 1 and ">y</text>" in text

    def test_log_axis_breaks_at_nonpositive(self):
        text = svg.Chart("log", logy=True).add([0, 1, 2, 3, 4], [1.0, 2.0, 0.0, 3.0, 4.0]).render()
        assert polylines(text) == 2

    def test_nan_breaks_line(self):
        text = svg.Chart("gap").add([0, 1, 2, 3], [1.0, np.nan, 2.0, 3.0]).render()
        assert polylines(text) == 2

    def test_empty_chart_rejected(self, tmp_path):
        with pytest.raises(svg.PlotError):
            svg.Chart("nothing").render()
        target = tmp_path / "x.svg"
        with pytest.raises(svg.PlotError):
            svg.Chart("all nan").add([0, 1], [np.nan, np.nan]).save(target)
        assert not target.exists()

    def test_labels_escaped(self):
        text = svg.Chart("a < b & c").add([0, 1], [0, 1], "<x>").render()
        assert "a &lt; b &amp; c" in text and "&lt;x&gt;" in text

    def test_constant_series(self):
        assert polylines(svg.Chart("flat").add([0, 1, 2], [3.0, 3.0, 3.0]).render()) == 1


class TestBuilders:
    def test_trace_charts_cover_quantities(self, periodic):
        _, cols = periodic
        charts = svg.trace_charts(cols)
        assert set(charts) == {"loss", "rho", "eff_lr", "eff_grad_norm", "cos_dist"}
        assert charts["loss"].logy and charts["eff_lr"].logy and not charts["rho"].logy
        assert all(c.render() for c in charts.values())

    def test_empty_trace(self):
        with pytest.raises(svg.PlotError):
            svg.trace_charts({"step": np.array([])})

    def test_period_chart_shades_three_phases(self, periodic):
        tr, cols = periodic
        period = next(p for p in segment_phases(tr, 0.01) if p.complete)
        text = svg.period_chart(cols, period.to_dict(), pad=5).render()
        for name in "ABC":
            assert f"phase {name}" in text
            assert svg.PHASE_COLORS[name] in text
        assert polylines(text) == 2

    def test_phase_diagram(self, periodic):
        ch = svg.phase_diagram(periodic[1])
        assert ch.xlabel == "effective gradient norm" and ch.logy
        assert polylines(ch.render()) >= 1

    def test_envelope_chart(self, periodic):
        tr, cols = periodic
        period = next(p for p in segment_phases(tr, 0.01) if p.complete)
        overlay = delta_envelopes(tr, fit_envelopes(tr, period.phases["B"], "const"))
        text = svg.envelope_chart(cols, overlay, period.phases["B"]).render()
        assert "delta_min" in text and "delta_max" in text

    def test_monotone_lr_without_decay(self):
        tr = run(ToyRational(), OptimizerConfig(eta=1.0, lam=0.0, steps=500), X0)
        y = tr["eff_lr"]
        assert np.all(np.diff(y[1:]) <= 0)
        assert polylines(svg.trace_charts(tr.columns)["eff_lr"].render()) == 1
