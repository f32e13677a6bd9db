"""Command-line driver: one subcommand per pipeline stage plus ``run``.

Stages communicate only through versioned artifacts in the output directory,
so any stage can be rerun on its own once its inputs exist.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .artifacts import load_artifact, save_artifact
from .binning import BinGrid, build_grid, estimate_velocity
from .config import PipelineConfig, load_config
from .coordmap import CoordinateMap, build_map, constant_u_curves
from .errors import ConfigError, NoValidBinsError, PhaseSepError
from .frames import FrameField, align_frames, build_frames
from .separability import (ORDERS, _fill_gaps, evaluate_on_series, recovery_score,
                           verdict_pipeline)
from .signal_io import (TimeSeries, generate_sources, load_series, mix_sources,
                        pca_normalize, store_series, to_amplitude)
from .weights import compute_weights, enumerate_partitions, weight_correlation

log = logging.getLogger("phasesep")

STAGES = ("gen", "mix", "bin", "frames", "weights", "map", "verify", "recover")


class StageFailure(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Context:
    cfg: PipelineConfig
    out: Path

    def load(self, kind, stage):
        return load_artifact(self.out, kind, required_by=stage)

    def save(self, kind, arrays):
        return save_artifact(self.out, kind, arrays)


def _series(a):
    return TimeSeries(a["samples"], float(a["sample_rate"]))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _write_kv(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k}={_fmt(v)}\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- stages

def stage_gen(ctx, args):
    src = ctx.cfg.source
    s = generate_sources(src.kind, src.n_channels, src.n_samples, src.rate, src.seed,
                         src.coupling)
    ctx.save("sources", {"samples": s.samples, "sample_rate": s.sample_rate})
    store_series(s, ctx.out / "sources.wav")
    log.info("gen: %d samples x %d channels (%s)", len(s), s.n_channels, src.kind)


def stage_mix(ctx, args):
    external = getattr(args, "input", None)
    if external:
        x = load_series(external)
        origin = str(external)
    else:
        s = _series(ctx.load("sources", "mix"))
        x = mix_sources(s, ctx.cfg.mixing)
        origin = "sources"
    ctx.save("mixtures", {"samples": x.samples, "sample_rate": x.sample_rate,
                          "from_sources": not external, "origin": origin})
    log.info("mix: %d samples from %s", len(x), origin)


def _source_grid(ctx, pca, n_lines=9, n_points=201):
    """Images of constant-source lines under mixing + normalization."""
    s = ctx.load("sources", "bin")["samples"]
    lo, hi = s.min(axis=0), s.max(axis=0)
    rows = []
    for comp in range(2):
        other = 1 - comp
        for level in np.linspace(lo[comp], hi[comp], n_lines):
            line = np.empty((n_points, 2))
            line[:, comp] = level
            line[:, other] = np.linspace(lo[other], hi[other], n_points)
            x = pca.apply(mix_sources(TimeSeries(line, 1.0), ctx.cfg.mixing).samples)
            rows += [(comp + 1, _fmt(level), i, _fmt(p[0]), _fmt(p[1]))
                     for i, p in enumerate(x)]
    _write_csv(ctx.out / "source_grid.csv", ["fixed_source", "level", "vertex", "x1", "x2"],
               rows)


def stage_bin(ctx, args):
    mix = ctx.load("mixtures", "bin")
    x, pca = pca_normalize(_series(mix))
    ctx.save("normalized", {"samples": x.samples, "sample_rate": x.sample_rate,
                            "pca_mean": pca.mean, "pca_rotation": pca.rotation,
                            "pca_scales": pca.scales})
    o = ctx.cfg.options
    grid = build_grid(estimate_velocity(x), o.bins_per_dim, o.min_count, o.margin)
    ctx.save("grid", grid.to_arrays())
    if bool(mix["from_sources"]) and x.n_channels == 2:
        _source_grid(ctx, pca)
    log.info("bin: %d of %d bins hold >= %d samples", int(grid.valid.sum()), grid.n_bins,
             grid.min_count)


def write_quiver(path, field):
    """One row per framed bin: center, then the local vectors V_(1..N)."""
    dim = field.dim
    header = ([f"x{d + 1}" for d in range(dim)]
              + [f"v{k + 1}_{d + 1}" for k in range(dim) for d in range(dim)]
              + ["degenerate"])
    centers = field.centers()
    rows = []
    for b in np.flatnonzero(field.valid):
        V = field.V[b]
        rows.append([_fmt(c) for c in centers[b]]
                    + [_fmt(V[d, k]) for k in range(dim) for d in range(dim)]
                    + [int(field.degenerate[b])])
    _write_csv(path, header, rows)
    return len(rows)


def stage_frames(ctx, args):
    grid = BinGrid.from_arrays(ctx.load("grid", "frames"))
    frames = build_frames(grid, ctx.cfg.options.degeneracy_tol)
    if not frames:
        raise NoValidBinsError()
    field = align_frames(grid, frames)
    ctx.save("frames", field.to_arrays())
    quiver = getattr(args, "quiver_out", None) or ctx.out / "quiver.csv"
    n = write_quiver(quiver, field)
    log.info("frames: %d frames (%d degenerate), quiver -> %s", n,
             int(field.degenerate[field.valid].sum()), quiver)


def _partitions_from(corr, threshold):
    parts = enumerate_partitions(corr, threshold)
    passed = bool(parts)
    if not parts:
        parts = [min(enumerate_partitions(corr, np.inf), key=lambda p: p.score)]
    return parts, passed


def stage_weights(ctx, args):
    x = _series(ctx.load("normalized", "weights"))
    field = FrameField.from_arrays(ctx.load("frames", "weights"))
    ws = compute_weights(estimate_velocity(x), field)
    corr = weight_correlation(ws)
    ctx.save("weights", {"t_index": ws.t_index, "w": ws.w, "dropped": ws.dropped,
                         "corr": corr})
    _write_csv(ctx.out / "weights.csv",
               ["t"] + [f"w{k + 1}" for k in range(ws.width)],
               ([int(t)] + [_fmt(v) for v in row] for t, row in zip(ws.t_index, ws.w)))
    parts, passed = _partitions_from(corr, ctx.cfg.options.partition_threshold)
    with open(ctx.out / "partitions.txt", "w") as fh:
        if not passed:
            fh.write("# no bipartition within threshold; least correlated split:\n")
        for p in parts:
            g = " | ".join(" ".join(str(i + 1) for i in grp) for grp in p.groups)
            fh.write(f"{g}\tmax_cross_corr={_fmt(p.score)}\n")
    log.info("weights: %d samples (%d dropped), %d acceptable partition(s)", len(ws),
             ws.dropped, len(parts) if passed else 0)


def stage_map(ctx, args):
    field = FrameField.from_arrays(ctx.load("frames", "map"))
    corr = ctx.load("weights", "map")["corr"]
    o = ctx.cfg.options
    parts, passed = _partitions_from(corr, o.partition_threshold)
    maps = [build_map(field, p, step=o.step, cross_tol=o.cross_tol, refine=o.refine,
                      threads=o.threads) for p in parts]
    payload = {"n_candidates": len(maps), "partition_passed": passed,
               "scores": np.array([p.score for p in parts])}
    for i, m in enumerate(maps):
        payload.update({f"c{i}_{k}": v for k, v in m.to_arrays().items()})
    ctx.save("map", payload)

    best = maps[0]
    nodes = best.nodes()
    _write_csv(ctx.out / "map_grid.csv", ["node", "x1", "x2", "u1", "u2", "defined"],
               ([k, _fmt(p[0]), _fmt(p[1]), _fmt(u[0]), _fmt(u[1]), int(d)]
                for k, (p, u, d) in enumerate(zip(nodes, best.u, best.defined))))
    rows = []
    for comp, level, line in constant_u_curves(field, best):
        rows += [(comp + 1, _fmt(level), i, _fmt(p[0]), _fmt(p[1]))
                 for i, p in enumerate(line.points)]
    _write_csv(ctx.out / "map_curves.csv", ["fixed_u", "level", "vertex", "x1", "x2"], rows)
    log.info("map: %d candidate(s), defined fraction %.3f", len(maps),
             best.defined_fraction())


def _load_maps(ctx, stage):
    a = ctx.load("map", stage)
    maps = []
    for i in range(int(a["n_candidates"])):
        pre = f"c{i}_"
        maps.append(CoordinateMap.from_arrays(
            {k[len(pre):]: v for k, v in a.items() if k.startswith(pre)}))
    return maps, bool(a["partition_passed"])


def stage_verify(ctx, args):
    maps, passed = _load_maps(ctx, "verify")
    x = _series(ctx.load("normalized", "verify"))
    verdict = verdict_pipeline(x, maps, ctx.cfg.options.separability_threshold)
    separable = verdict.separable and passed
    best = next(i for i, m in enumerate(maps) if m is verdict.best_map)
    r = verdict.report
    ctx.save("verdict", {"separable": separable, "best": best, "max_stat": r.max_stat,
                         "threshold": r.threshold, "n_samples": r.n_samples,
                         "position": r.position, "velocity": r.velocity, "rank": r.rank,
                         "partition_passed": passed})
    info = r.as_dict()
    info["verdict"] = "separable" if separable else "inseparable"
    items = [("verdict", info.pop("verdict")), ("partition_passed", passed),
             ("candidate", best)] + list(info.items())
    _write_kv(ctx.out / "report.txt", items)
    rows = []
    for name, table, labels in (("position", r.position, ORDERS),
                                ("velocity", r.velocity, ORDERS), ("rank", r.rank, (1, 2))):
        rows += [(name, p, q, _fmt(table[i, j])) for i, p in enumerate(labels)
                 for j, q in enumerate(labels)]
    _write_csv(ctx.out / "report.csv", ["table", "p", "q", "value"], rows)
    log.info("verify: %s (max statistic %.4f, threshold %.4f)", items[0][1], r.max_stat,
             r.threshold)


def stage_recover(ctx, args):
    verdict = ctx.load("verdict", "recover")
    maps, _ = _load_maps(ctx, "recover")
    x = _series(ctx.load("normalized", "recover"))
    if not bool(verdict["separable"]):
        log.warning("recover: the verdict is 'inseparable'; outputs are not separated sources")
    u, ok = evaluate_on_series(maps[int(verdict["best"])], x)
    if not ok.any():
        raise PhaseSepError("the coordinate map is undefined at every sample")
    held = np.column_stack([_fill_gaps(u[:, k], ok) for k in range(2)])
    ctx.save("recovered", {"u": u, "valid": ok, "sample_rate": x.sample_rate})
    _write_csv(ctx.out / "recovered.csv", ["t", "u1", "u2", "defined"],
               ([t, _fmt(a), _fmt(b), int(d)] for t, ((a, b), d) in enumerate(zip(held, ok))))
    for k in range(2):
        store_series(TimeSeries(to_amplitude(held[:, k])[:, None], x.sample_rate),
                     ctx.out / f"recovered_u{k + 1}.wav")
    metrics = [("defined_fraction", float(ok.mean()))]
    mix = ctx.load("mixtures", "recover")
    src_path = artifacts.artifact_path(ctx.out, "sources")
    if bool(mix["from_sources"]) and src_path.exists():
        s = ctx.load("sources", "recover")["samples"]
        score = recovery_score(u, s, valid=ok)
        metrics += [(f"spearman_u{i + 1}_s{int(score.perm[i]) + 1}", float(score.matched[i]))
                    for i in range(2)]
        metrics.append(("spearman_cross_max", score.cross))
    _write_kv(ctx.out / "recovery.txt", metrics)
    log.info("recover: %s", ", ".join(f"{k}={_fmt(v)}" for k, v in metrics))


STAGE_FUNCS = {
    "gen": stage_gen, "mix": stage_mix, "bin": stage_bin, "frames": stage_frames,
    "weights": stage_weights, "map": stage_map, "verify": stage_verify,
    "recover": stage_recover,
}


def run_stage(name, ctx, args):
    try:
        STAGE_FUNCS[name](ctx, args)
    except ConfigError:
        raise
    except (PhaseSepError, ValueError, NotImplementedError, OSError,
            np.linalg.LinAlgError) as exc:
        raise StageFailure(name, exc) from exc


# ---------------------------------------------------------------- summary

def summary_items(out):
    """Deterministic headline metrics gathered from the artifacts in ``out``."""
    items = []
    grid = load_artifact(out, "grid")
    items += [("bins", int(np.prod(grid["shape"]))),
              ("valid_bins", int((grid["counts"] >= grid["min_count"]).sum()))]
    fr = load_artifact(out, "frames")
    items += [("framed_bins", int(fr["valid"].sum())),
              ("degenerate_bins", int((fr["degenerate"] & fr["valid"]).sum()))]
    w = load_artifact(out, "weights")
    corr = w["corr"]
    items += [(f"weight_corr_{i + 1}{j + 1}", float(corr[i, j]))
              for i in range(len(corr)) for j in range(i + 1, len(corr))]
    items.append(("weights_dropped", int(w["dropped"])))
    v = load_artifact(out, "verdict")
    items += [("verdict", "separable" if bool(v["separable"]) else "inseparable"),
              ("max_stat", float(v["max_stat"])), ("threshold", float(v["threshold"]))]
    rec = out / "recovery.txt"
    if rec.exists():
        items += [tuple(line.split("=", 1)) for line in rec.read_text().splitlines()]
    return items


# ---------------------------------------------------------------- parser

def _parse_sets(pairs):
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="phasesep", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--out", type=Path, help="output directory (overrides run.output_dir)")
    p.add_argument("--threads", type=int, help="worker cap (overrides run.threads)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a configuration value; may be repeated")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", help="generate synthetic sources")
    m = sub.add_parser("mix", help="mix the sources, or import an external mixture")
    m.add_argument("--input", type=Path, help="wav16 or CSV mixture to import instead")
    sub.add_parser("bin", help="normalize the mixture and accumulate per-bin moments")
    f = sub.add_parser("frames", help="compute and align local frames")
    f.add_argument("--quiver-out", type=Path, help="CSV of local vectors per bin")
    sub.add_parser("weights", help="weight series, correlations and partitions")
    sub.add_parser("map", help="build candidate coordinate maps")
    sub.add_parser("verify", help="separability verdict for the candidate maps")
    sub.add_parser("recover", help="write the recovered components")
    r = sub.add_parser("run", help="run every stage and write summary.txt")
    r.add_argument("--input", type=Path, help="external mixture (skips gen)")
    r.add_argument("--quiver-out", type=Path, help="CSV of local vectors per bin")
    c = sub.add_parser("config", help="write the effective configuration")
    c.add_argument("path", nargs="?", type=Path, help="destination (default: stdout)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        overrides = _parse_sets(args.set)
        if args.out is not None:
            overrides["run.output_dir"] = str(args.out)
        if args.threads is not None:
            overrides["run.threads"] = str(args.threads)
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"phasesep: config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "config":
        if args.path is None:
            cfg.to_ini().write(sys.stdout)
        else:
            cfg.write(args.path)
        return 0

    ctx = Context(cfg, Path(cfg.output_dir))
    ctx.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "run":
            stages = STAGES[1:] if args.input else STAGES
            for name in stages:
                run_stage(name, ctx, args)
            _write_kv(ctx.out / "summary.txt", summary_items(ctx.out))
            cfg.write(ctx.out / "config.ini")
        else:
            run_stage(args.command, ctx, args)
    except StageFailure as exc:
        print(f"phasesep: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"phasesep: config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
