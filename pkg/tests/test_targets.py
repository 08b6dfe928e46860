import pytest

from pathlib import Path

import numpy as np

from scipy import stats

from alpha_mixture.quadrature import GridKind, build_grid

from alpha_mixture.student import StudentTParams

from alpha_mixture.targets import (
    GridTargetFormatError,
    TargetError,
    TargetKind,
    UnknownTargetError,
    builtin_target,
    load_grid_target,
)


class TestBuiltinTarget:
    def test_ewgmm_value(self) -> None:
        target = builtin_target("ewgmm", 1)
        assert np.exp(target.log_density_at([0.0])) == pytest.approx(0.1079819, abs=1e-7)
        assert target.normaliser == 2.0
        assert target.label == "ewgmm"

    @pytest.mark.parametrize(
        "kind, mean",
        [
            (TargetKind.EWGMM, 0.0),
            (TargetKind.IMBALANCED_GMM, 0.2),
            (TargetKind.EWSMM, 0.0),
        ],
    )
    @pytest.mark.parametrize("d", [1, 16])
    def test_true_mean(self, kind: TargetKind, mean: float, d: int) -> None:
        target = builtin_target(kind, d)
        assert target.require_true_mean() == pytest.approx(np.full(d, mean), abs=1e-12)
        assert target.true_mean_by_symmetry == (kind == TargetKind.EWSMM)

    @pytest.mark.parametrize("kind", ["ewgmm", "imbalanced_gmm"])
    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("c", [0.5, 2.0])
    def test_normaliser(self, kind: str, d: int, c: float) -> None:
        target = builtin_target(kind, d, c)
        grid = build_grid(GridKind.GAUSS_HERMITE, d, 64, scale=2.0)
        assert np.exp(grid.log_integrate(target.log_p(grid.nodes))) == pytest.approx(c, rel=1e-4)

    def test_ewsmm_density(self) -> None:
        target = builtin_target("ewsmm", 1, c=1.0)
        y = np.linspace(-10, 10, 21)
        expected = 0.5 * stats.t(df=2, loc=-2).pdf(y) + 0.5 * stats.t(df=2, loc=2).pdf(y)
        assert np.exp(target.log_p(y[:, None])) == pytest.approx(expected, rel=1e-12)

    def test_ewsmm_scale_mixture(self) -> None:
        # The Student components integrate a Gaussian over the latent
        # Gamma(1, rate 1) scale
        target = builtin_target("ewsmm", 1, c=1.0)
        # Integrate over s = sqrt(z) so the integrand is smooth at zero
        s = np.linspace(0.0, np.sqrt(60.0), 400001)
        z = s**2
        prior = np.exp(-z) * 2 * s
        for y in [-3.0, 0.0, 0.5, 4.0]:
            density = 0.0
            for m in (-2.0, 2.0):
                normal = np.sqrt(z / (2 * np.pi)) * np.exp(-z * (y - m) ** 2 / 2)
                density += 0.5 * np.trapz(prior * normal, s)
            assert np.exp(target.log_density_at([y])) == pytest.approx(density, rel=1e-8)

    def test_student_matches_scale_mixture(self) -> None:
        params = StudentTParams([0.0], [[1.0]], 2.0)
        builtin = builtin_target("ewsmm", 1, c=1.0)
        y = np.array([[0.0]])
        expected = 0.5 * np.exp(params.with_mean(np.array([-2.0])).log_density(y))
        expected += 0.5 * np.exp(params.with_mean(np.array([2.0])).log_density(y))
        assert np.exp(builtin.log_p(y)) == pytest.approx(expected, rel=1e-14)

    def test_errors(self) -> None:
        with pytest.raises(UnknownTargetError):
            builtin_target("banana", 1)
        with pytest.raises(TargetError):
            builtin_target("ewgmm", 0)
        with pytest.raises(TargetError):
            builtin_target("ewgmm", 1, c=0.0)

    def test_descriptions(self) -> None:
        for kind in TargetKind:
            assert kind.description


class TestLoadGridTarget:
    def write(self, path: Path, text: str) -> Path:
        path.write_text(text, encoding="utf-8")
        return path

    def test_single_row(self, tmp_path: Path) -> None:
        target = load_grid_target(self.write(tmp_path / "one.csv", "x1,logp\n1.5,-0.25\n"))
        assert target.dimension == 1
        assert target.label == "one"
        assert target.log_density_at([1.5]) == -0.25
        assert target.log_density_at([1.6]) == -np.inf

    def test_interpolation(self, tmp_path: Path) -> None:
        target = load_grid_target(
            self.write(tmp_path / "line.csv", "x1,logp\n0,0\n1,1\n3,-1\n")
        )
        assert target.log_density_at([0.5]) == pytest.approx(0.5)
        assert target.log_density_at([2.0]) == pytest.approx(0.0)
        assert target.log_density_at([3.0]) == pytest.approx(-1.0)
        assert target.log_density_at([-0.1]) == -np.inf
        assert target.log_density_at([3.1]) == -np.inf

    def test_normal_grid(self, tmp_path: Path) -> None:
        x = np.linspace(-8, 8, 1601)
        rows = "".join(f"{v!r},{stats.norm.logpdf(v)!r}\n" for v in x)
        target = load_grid_target(self.write(tmp_path / "normal.csv", "x1,logp\n" + rows))
        grid = build_grid(GridKind.UNIFORM, 1, 2000, lower=-8.0, upper=8.0)
        assert np.exp(grid.log_integrate(target.log_p(grid.nodes))) == pytest.approx(
            1.0, abs=1e-3
        )

    def test_two_dimensional(self, tmp_path: Path) -> None:
        text = "x1,x2,logp\n0,0,0\n0,1,1\n1,0,2\n1,1,3\n"
        target = load_grid_target(self.write(tmp_path / "square.csv", text))
        assert target.dimension == 2
        assert target.log_density_at([0.5, 0.5]) == pytest.approx(1.5)
        assert target.log_density_at([1.0, 0.0]) == pytest.approx(2.0)
        assert target.log_density_at([0.5, 1.5]) == -np.inf

    def test_degenerate_axis(self, tmp_path: Path) -> None:
        text = "x1,x2,logp\n2,0,0\n2,1,1\n"
        target = load_grid_target(self.write(tmp_path / "slice.csv", text))
        assert target.log_density_at([2.0, 0.25]) == pytest.approx(0.25)
        assert target.log_density_at([2.1, 0.25]) == -np.inf

    @pytest.mark.parametrize(
        "text",
        [
            # Empty or bad header
            "",
            "logp\n",
            "y1,logp\n0,0\n",
            "x1,logp\n",
            # Bad rows
            "x1,logp\n0\n",
            "x1,logp\n0,zero\n",
            "x1,logp\n0,nan\n",
            "x1,logp\n0,inf\n",
            # Not a sorted rectangular grid
            "x1,logp\n1,0\n0,0\n",
            "x1,logp\n0,0\n0,0\n",
            "x1,x2,logp\n0,0,0\n0,1,0\n1,0,0\n",
            "x1,x2,logp\n0,0,0\n1,0,0\n0,1,0\n1,1,0\n",
        ],
    )
    def test_malformed(self, tmp_path: Path, text: str) -> None:
        with pytest.raises(GridTargetFormatError):
            load_grid_target(self.write(tmp_path / "bad.csv", text))

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(OSError):
            load_grid_target(tmp_path / "missing.csv")
