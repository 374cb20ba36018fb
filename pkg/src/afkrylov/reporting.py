"""Delimited outputs (trace/summary CSV, PGM and CSV images) and figures.

All numeric CSV fields are written with %.17g so reruns with the same seed
reproduce files byte for byte.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "TRACE_COLUMNS",
    "write_trace_csv",
    "read_trace_csv",
    "write_summary_csv",
    "write_vector_csv",
    "write_pgm",
    "render_figures",
]

# versioned schema of the per-iteration trace
TRACE_COLUMNS = ("k", "lambda_x", "lambda_xi", "rel_err_u", "rel_err_x",
                 "rel_err_xi", "phi", "proj_residual", "gcv",
                 "A_applies", "At_applies", "Q_applies")


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_trace_csv(path, trace):
    """Write the per-iteration trace of one solve."""
    lines = [",".join(TRACE_COLUMNS)]
    for t in trace:
        row = (t.k, t.lambda_x, t.lambda_xi, t.rel_error_u, t.rel_error_x,
               t.rel_error_xi, t.phi_value, t.projected_residual, t.gcv_value,
               t.a_applies, t.at_applies, t.q_applies)
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path):
    """Read a trace.csv back as a dict of column arrays; checks the schema."""
    text = Path(path).read_text().strip().splitlines()
    header = tuple(text[0].split(","))
    missing = set(TRACE_COLUMNS) - set(header)
    if missing:
        raise ValueError(f"{path}: missing trace columns {sorted(missing)}")
    cols = {name: [] for name in header}
    for line in text[1:]:
        for name, field in zip(header, line.split(",")):
            cols[name].append(float(field))
    return {name: np.asarray(vals) for name, vals in cols.items()}


def write_summary_csv(path, rows):
    """rows: list of dicts with solver, iterations, stop_reason, errors, time."""
    header = ("solver", "iterations", "stop_reason", "rel_err_u", "rel_err_x",
              "rel_err_xi", "wall_time_s")
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join([
            str(r["solver"]), str(int(r["iterations"])), str(r["stop_reason"]),
            _fmt(r["rel_err_u"]), _fmt(r["rel_err_x"]), _fmt(r["rel_err_xi"]),
            _fmt(r["wall_time_s"])]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_vector_csv(path, v):
    np.savetxt(path, np.asarray(v, dtype=float), fmt="%.17g")


def write_pgm(path, image):
    """8-bit binary PGM, min-max scaled; the scaling constants are recorded
    in a comment line so the grey levels can be mapped back."""
    img = np.asarray(image, dtype=float)
    lo, hi = float(np.min(img)), float(np.max(img))
    scale = hi - lo if hi > lo else 1.0
    pix = np.round((img - lo) / scale * 255.0).astype(np.uint8)
    header = f"P5\n# min={_fmt(lo)} max={_fmt(hi)}\n{img.shape[1]} {img.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pix.tobytes())


def _stop_marker(ax, ks, vals):
    ax.plot(ks[-1], vals[-1], marker="D", markersize=7, linestyle="none",
            color=ax.lines[-1].get_color())


def render_figures(results, outdir, problem=None):
    """Render the standard report figures next to the delimited output.

    results: ordered mapping solver name -> SolveResult.
    Writes errors.png, params.png, gcv.png and one reconstruction panel per
    solver (plus the truth when available).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    made = []

    def ks_of(res):
        return np.array([t.k for t in res.trace])

    any_err = any(np.isfinite([t.rel_error_u for t in r.trace]).any()
                  for r in results.values() if r.trace)
    if any_err:
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, res in results.items():
            errs = np.array([t.rel_error_u for t in res.trace])
            if not np.isfinite(errs).any():
                continue
            ax.semilogy(ks_of(res), errs, label=name)
            _stop_marker(ax, ks_of(res), errs)
        ax.set_xlabel("iteration")
        ax.set_ylabel("relative error")
        ax.legend()
        fig.tight_layout()
        fig.savefig(outdir / "errors.png", dpi=150)
        plt.close(fig)
        made.append("errors.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    for name, res in results.items():
        ks = ks_of(res)
        lx = np.array([t.lambda_x for t in res.trace])
        lxi = np.array([t.lambda_xi for t in res.trace])
        if np.isfinite(lx).any():
            ax.semilogy(ks, lx, label=f"{name} lambda_x")
            plotted = True
        if np.isfinite(lxi).any():
            ax.semilogy(ks, lxi, "--", label=f"{name} lambda_xi")
            plotted = True
    if plotted:
        ax.set_xlabel("iteration")
        ax.set_ylabel("regularization parameter")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(outdir / "params.png", dpi=150)
        made.append("params.png")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    for name, res in results.items():
        g = np.array([t.gcv_value for t in res.trace])
        if np.isfinite(g).any():
            ax.semilogy(ks_of(res), g, label=name)
            plotted = True
    if plotted:
        ax.set_xlabel("iteration")
        ax.set_ylabel("GCV stopping value")
        ax.legend()
        fig.tight_layout()
        fig.savefig(outdir / "gcv.png", dpi=150)
        made.append("gcv.png")
    plt.close(fig)

    side = None
    if results:
        n = len(next(iter(results.values())).u)
        s = int(round(np.sqrt(n)))
        side = s if s * s == n else None
    if side:
        for name, res in results.items():
            have_truth = problem is not None
            ncols = 3
            nrows = 2 if have_truth else 1
            fig, axes = plt.subplots(nrows, ncols, figsize=(3 * ncols, 3 * nrows))
            axes = np.atleast_2d(axes)
            panels = [("u", res.u), ("x", res.x), ("xi", res.xi)]
            if have_truth:
                panels += [("u true", problem.u_true), ("x true", problem.x_true),
                           ("xi true", problem.xi_true)]
            for ax, (title, img) in zip(axes.ravel(), panels):
                im = ax.imshow(img.reshape(side, side), cmap="viridis")
                ax.set_title(title, fontsize=9)
                ax.set_xticks([])
                ax.set_yticks([])
                fig.colorbar(im, ax=ax, fraction=0.046)
            fig.suptitle(name)
            fig.tight_layout()
            fname = f"recon_{name}.png"
            fig.savefig(outdir / fname, dpi=150)
            plt.close(fig)
            made.append(fname)
    return made
