"""Static figures for reports and tree samples (SVG by default)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .oracles import perimeter_density  # noqa: E402

# fixed metadata keeps the SVG bytes reproducible
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_META if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def laplace_figure(rows: list[dict], path: Path, title: str = "") -> Path:
    lam = np.array([r["lambda"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.fill_between(lam, [r["lo"] for r in rows], [r["hi"] for r in rows], alpha=0.3,
                    label="bootstrap 95%")
    ax.plot(lam, [r["empirical"] for r in rows], "o-", label="empirical")
    ax.plot(lam, [r["oracle"] for r in rows], "k--", label="closed form")
    ax.set_xlabel("lambda")
    ax.set_ylabel("E exp(-lambda X)")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def slope_figure(rows: list[dict], path: Path) -> Path:
    eps = np.array([r["eps"] for r in rows])
    p = np.array([r["p"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    err = np.array([p - [r["lo"] for r in rows], [r["hi"] for r in rows] - p])
    ax.errorbar(eps, p, yerr=np.maximum(err, 0), fmt="o", label="P(L <= eps)")
    k, c = np.polyfit(np.log(eps), np.log(p), 1)
    ax.plot(eps, np.exp(c) * eps ** k, "-", label=f"fit slope {k:.2f}")
    ax.plot(eps, p[-1] * (eps / eps[-1]) ** 2, "k:", label="slope 2")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.legend()
    return _save(fig, path)


def tail_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    u = [r["u"] for r in rows]
    ax.plot(u, [r["rate"] for r in rows], "o-", label="log P(L > u) / u")
    ax.plot(u, [r["rate_upper"] for r in rows], "x:", label="upper 4 sigma")
    ax.axhline(-0.10, color="k", ls="--", label="-0.10")
    ax.set_xlabel("u")
    ax.legend()
    return _save(fig, path)


def lamperti_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for lam in sorted({r["lambda"] for r in rows}):
        sub = [r for r in rows if r["lambda"] == lam]
        t = [r["t"] for r in sub]
        ax.errorbar(t, [r["estimate"] for r in sub],
                    yerr=np.maximum([[r["estimate"] - r["lo"] for r in sub],
                                     [r["hi"] - r["estimate"] for r in sub]], 0),
                    fmt="o-", label=f"lambda = {lam}")
        ax.axhline(sub[0]["psi"], ls="--", color=ax.lines[-1].get_color())
    ax.set_xlabel("t")
    ax.set_ylabel("(1/t) log E exp(lambda xi_t)")
    ax.legend()
    return _save(fig, path)


def histogram_figure(values, path: Path, density=None, xlabel: str = "") -> Path:
    values = np.asarray(values, float)
    values = values[np.isfinite(values)]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    hi = np.quantile(values, 0.99) if values.size else 1.0
    ax.hist(values, bins=60, range=(0, hi), density=True, alpha=0.6)
    if density is not None:
        x = np.linspace(0, hi, 400)
        ax.plot(x, density(x), "k--")
    ax.set_xlabel(xlabel)
    return _save(fig, path)


def cycles_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter([r["bound"] for r in rows], [r["length"] for r in rows], s=6)
    top = max((r["bound"] for r in rows), default=1.0)
    ax.plot([0, top], [0, top], "k--", label="length = 2(N+1)(s-r)")
    ax.set_xlabel("2(N+1)(s-r)")
    ax.set_ylabel("cycle length")
    ax.legend()
    return _save(fig, path)


def markov_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    sc = ax.scatter([r["hull1"] for r in rows], [r["exterior"] for r in rows],
                    c=[r["z1"] for r in rows], s=5, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="Z_1 estimate")
    ax.set_xscale("log")
    ax.set_xlabel("|B_1|")
    ax.set_ylabel("exterior volume")
    return _save(fig, path)


def cactus_figure(tree, path, max_points: int = 200_000) -> Path:
    """Labels against exploration time; bands of label levels show hulls and cycles."""
    n = len(tree)
    step = max(1, n // max_points)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(tree.expl_time[::step], tree.label[::step], ",", alpha=0.5)
    ax.set_xlabel("exploration time")
    ax.set_ylabel("label")
    return _save(fig, Path(path))


def report_figures(report, path) -> list[Path]:
    path = Path(path)
    stem = path.stem
    out = []

    def target(name):
        return path.with_name(f"{stem}_{name}.svg")

    t = report.tables
    if t.get("laplace"):
        out.append(laplace_figure(t["laplace"], target("laplace"), report.experiment))
    if t.get("short_cycles") and all(r["p"] > 0 for r in t["short_cycles"]):
        out.append(slope_figure(t["short_cycles"], target("slope")))
    if t.get("upper_tail"):
        out.append(tail_figure(t["upper_tail"], target("tail")))
    if t.get("lamperti"):
        out.append(lamperti_figure(t["lamperti"], target("lamperti")))
    if t.get("samples"):
        key = next(iter(t["samples"][0]))
        vals = [r[key] for r in t["samples"]]
        dens = (lambda x: perimeter_density(x, 1.0)) if key == "z1" else None
        out.append(histogram_figure(vals, target("histogram"), dens, key))
    if t.get("cycles"):
        out.append(cycles_figure(t["cycles"], target("cycles")))
    if t.get("markov"):
        out.append(markov_figure(t["markov"], target("markov")))
    return out
