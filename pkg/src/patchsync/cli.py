"""``l2g`` command-line front end.

Every stage reads its inputs from files and writes its outputs to files, so
any stage can be rerun on its own from persisted artifacts. Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors, 4 for numerical
failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__, io
from .align import align_patches, hierarchical_align, unaligned_centroid
from .anomaly import (DEFAULT_LAGS, build_temporal_patches, outlier_flags, raw_anomaly_scores,
                      reference_embedding, standardized_scores)
from .embed import embed_patches, load_patch_coords, write_patch_coords
from .errors import ConfigError, DataError, PatchSyncError
from .evaluation import auc_details, generate_synthetic, procrustes_error
from .graph import EmbeddingMatrix, largest_connected_component, load_edge_list, load_snapshots
from .kernels import BACKEND
from .patches import PatchGraph, build_patches

log = logging.getLogger("patchsync")

PATCH_FILE = "patches.txt"
PATCH_GRAPH_FILE = "patch_graph.txt"
CLUSTER_FILE = "clusters.txt"
EMBED_META = "embed.json"
BUILTIN_BACKENDS = ("svd", "spectral")


@dataclass
class PipelineConfig:
    graph: str
    out: str
    dim: int = 32
    num_patches: int = 10
    min_overlap: int = 64
    max_overlap: int = 256
    target_degree: int = 4
    scale_sync: str = "auto"
    hierarchical: int = 0
    backend: str = "spectral"
    resistance: bool = True
    alg1_literal: bool = False
    seed: int = 0
    jobs: int = 1
    neg_samples: int | None = None

    def validate(self):
        d, l, u = self.dim, self.min_overlap, self.max_overlap
        if d < 1:
            raise ConfigError(f"dim must be positive, got {d}")
        if self.num_patches < 1:
            raise ConfigError(f"num_patches must be at least 1, got {self.num_patches}")
        if l < d + 1:
            raise ConfigError(f"min_overlap l={l} must be at least dim+1={d + 1}")
        if u < 2 * l:
            raise ConfigError(f"max_overlap u={u} must be at least 2*l={2 * l}")
        if self.target_degree < 2:
            raise ConfigError(f"target_degree k must be at least 2, got {self.target_degree}")
        if self.scale_sync not in ("on", "off", "auto"):
            raise ConfigError(f"scale_sync must be on, off or auto, got {self.scale_sync!r}")
        if self.backend not in BUILTIN_BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.hierarchical < 0:
            raise ConfigError("hierarchical cluster count must be non-negative")
        return self

    @classmethod
    def from_json(cls, path, **overrides):
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class StageError(PatchSyncError):
    def __init__(self, stage, exc, hint):
        self.exit_code = getattr(exc, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {exc}\n  hint: {hint}")


HINTS = {
    "patches": "check the graph file and that l, u and p are feasible for its size",
    "embed": "lower --dim or raise --min-overlap so every patch has more than dim+1 nodes",
    "align": "patch graph must stay connected after dropping edges with overlap < dim+1",
    "eval": "the stitched embedding must cover every node of the graph",
}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} {p} does not exist")
    return p


def _load_graph(path):
    g = load_edge_list(_require_file(path, "graph file"))
    lcc = largest_connected_component(g)
    if lcc.n < g.n:
        log.info("keeping the largest connected component: %d of %d nodes", lcc.n, g.n)
    return lcc


def _scale_sync_flag(mode, coords_dir):
    if mode != "auto":
        return mode == "on"
    meta = Path(coords_dir) / EMBED_META
    if meta.is_file():
        backend = json.loads(meta.read_text()).get("backend")
        return backend in BUILTIN_BACKENDS
    return False


def read_patch_dir(directory):
    d = Path(directory)
    patches = io.read_patches(_require_file(d / PATCH_FILE, "patch file"))
    edges, _ = io.read_patch_edges(_require_file(d / PATCH_GRAPH_FILE, "patch-graph file"))
    clusters = io.read_patches(d / CLUSTER_FILE) if (d / CLUSTER_FILE).is_file() else None
    return PatchGraph(tuple(patches), edges, None, None if clusters is None else tuple(clusters))


def write_patch_dir(pg, directory, meta=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_patches(pg.patches, d / PATCH_FILE)
    io.write_patch_edges(pg.edges, pg.weights, d / PATCH_GRAPH_FILE)
    if pg.clusters is not None:
        io.write_patches(pg.clusters, d / CLUSTER_FILE)
    if meta is not None:
        _write_json(d / "patches.json", meta)


def stage_patches(graph, out, *, num_patches, dim, min_overlap, max_overlap, target_degree,
                  resistance=True, literal=False, seed=0):
    g = _load_graph(graph)
    pg = build_patches(g, num_patches, dim, min_overlap, max_overlap, target_degree,
                       seed=seed, resistance=resistance, literal=literal)
    meta = {
        "nodes": g.n, "edges": g.m, "num_patches": pg.p, "patch_edges": pg.num_edges,
        "patch_sizes": [int(P.size) for P in pg.patches],
        "overlap_min": float(pg.weights.min()) if pg.num_edges else None,
        "overlap_max": float(pg.weights.max()) if pg.num_edges else None,
        "seed": seed,
    }
    write_patch_dir(pg, out, meta)
    return meta


def stage_embed(patches_dir, graph, out, *, dim, backend="spectral", seed=0, jobs=1):
    g = _load_graph(graph)
    pg = read_patch_dir(patches_dir)
    results = embed_patches(g, pg.patches, dim, backend=backend, seed=seed, jobs=jobs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_patch_coords(out, [r[0] for r in results])
    if backend == "svd":
        write_patch_coords(out, [r[1] for r in results], role="dst")
    meta = {"backend": backend, "dim": dim, "num_patches": pg.p, "seed": seed}
    _write_json(out / EMBED_META, meta)
    return meta


def stage_align(patches_dir, coords_dir, out, *, scale_sync="auto", hierarchical=0, seed=0,
                role=None, diagnostics=None):
    pg = read_patch_dir(patches_dir)
    if not Path(coords_dir).is_dir():
        raise DataError(f"coordinate directory {coords_dir} does not exist")
    pg = load_patch_coords(coords_dir, pg, role=role)
    sync = _scale_sync_flag(scale_sync, coords_dir)
    t0 = time.perf_counter()
    if hierarchical and hierarchical > 1:
        res = hierarchical_align(pg, hierarchical, scale_sync=sync, seed=seed)
    else:
        res = align_patches(pg, scale_sync=sync, seed=seed)
    elapsed = time.perf_counter() - t0
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_embedding_binary(res.embedding, out)
    diag = dict(res.diagnostics)
    diag.update({"scale_sync": sync, "hierarchical": hierarchical, "wall_time": elapsed,
                 "scales": res.scales})
    diag_path = Path(diagnostics) if diagnostics else out.with_suffix(".diagnostics.json")
    _write_json(diag_path, diag)
    return res, pg, diag


def stage_eval(emb_path, graph, *, neg=None, seed=0):
    g = load_edge_list(_require_file(graph, "graph file"))
    emb = io.read_embedding(_require_file(emb_path, "embedding file"))
    nodes = np.intersect1d(g.node_ids, emb.node_ids)
    if nodes.size < g.n:
        g = largest_connected_component(g)
    return auc_details(emb, g, neg, seed=seed)


def run_pipeline(cfg):
    """patches -> embed -> align -> eval, every artifact persisted under ``cfg.out``."""
    cfg.validate()
    _require_file(cfg.graph, "graph file")
    out = Path(cfg.out)
    timings = {}
    artifacts = {}

    def run(stage, fn):
        t = time.perf_counter()
        try:
            result = fn()
        except PatchSyncError as exc:
            raise StageError(stage, exc, HINTS[stage]) from exc
        timings[stage] = time.perf_counter() - t
        return result

    patches_dir, coords_dir = out / "patches", out / "coords"
    stitched = out / "stitched.l2ge"
    run("patches", lambda: stage_patches(
        cfg.graph, patches_dir, num_patches=cfg.num_patches, dim=cfg.dim,
        min_overlap=cfg.min_overlap, max_overlap=cfg.max_overlap,
        target_degree=cfg.target_degree, resistance=cfg.resistance,
        literal=cfg.alg1_literal, seed=cfg.seed))
    artifacts["patches"] = str(patches_dir)
    run("embed", lambda: stage_embed(patches_dir, cfg.graph, coords_dir, dim=cfg.dim,
                                     backend=cfg.backend, seed=cfg.seed, jobs=cfg.jobs))
    artifacts["coords"] = str(coords_dir)
    res, pg, diag = run("align", lambda: stage_align(
        patches_dir, coords_dir, stitched, scale_sync=cfg.scale_sync,
        hierarchical=cfg.hierarchical, seed=cfg.seed))
    artifacts["stitched"] = str(stitched)

    def evaluate():
        aligned = stage_eval(stitched, cfg.graph, neg=cfg.neg_samples, seed=cfg.seed)
        base_path = out / "unaligned.l2ge"
        io.write_embedding_binary(unaligned_centroid(pg), base_path)
        base = stage_eval(base_path, cfg.graph, neg=cfg.neg_samples, seed=cfg.seed)
        return {"aligned": aligned, "unaligned": base}

    ev = run("eval", evaluate)
    _write_json(out / "eval.json", ev)
    artifacts["eval"] = str(out / "eval.json")
    manifest = {
        "versions": {"patchsync": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "kernels": BACKEND},
        "seed": cfg.seed,
        "config": asdict(cfg),
        "timings": timings,
        "artifacts": artifacts,
        "eval": ev,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _parse_lags(text):
    try:
        lags = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"lags must be comma-separated integers, got {text!r}") from None
    if not lags:
        raise ConfigError("lag set must not be empty")
    return lags


def stage_anomaly(flows, out, *, dim, lags=DEFAULT_LAGS, min_obs=21, quantile=0.999,
                  scale_sync=True, seed=0):
    if min_obs < 3:
        raise ConfigError(f"min_obs must be at least 3, got {min_obs}")
    if not 0.5 < quantile < 1:
        raise ConfigError(f"quantile must lie in (0.5, 1), got {quantile}")
    snaps = load_snapshots(_require_file(flows, "flow file"))
    tps = build_temporal_patches(snaps, dim, lags, seed=seed)
    refs = reference_embedding(tps, scale_sync=scale_sync, seed=seed)
    raw = raw_anomaly_scores(tps, refs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"days": tps.days.tolist(), "lags": list(tps.lags), "min_obs": min_obs,
               "quantile": quantile, "roles": {}}
    for role, series in raw.items():
        z = standardized_scores(series, min_obs)
        rep = outlier_flags(z, quantile)
        with open(out / f"scores_{role}.csv", "w", encoding="utf-8") as fh:
            fh.write("node_id,day,raw,z,flags\n")
            order = np.lexsort((z.days, z.node_ids))
            for e in order:
                flags = []
                if rep.flagged[e]:
                    flags.append("outlier")
                if z.degenerate[e]:
                    flags.append("degenerate")
                if not z.scored[e]:
                    flags.append("unscored")
                zs = "" if np.isnan(z.z[e]) else repr(float(z.z[e]))
                fh.write(f"{z.node_ids[e]},{z.days[e]},{float(z.raw[e])!r},{zs},{'|'.join(flags)}\n")
        summary["roles"][role] = {
            "threshold": rep.threshold,
            "outliers_per_day": {str(k): v for k, v in rep.per_day.items()},
            "total_outliers": int(rep.flagged.sum()),
            "dropped_lag_edges": tps.dropped.get(role, []),
        }
    _write_json(out / "summary.json", summary)
    return summary


def stage_synth(out, *, nodes, dim, patches, overlap, noise, seed):
    prob = generate_synthetic(nodes, dim, patches, overlap, noise, seed)
    out = Path(out)
    pg = prob.patch_graph
    write_patch_dir(pg, out)
    coords = out / "coords"
    coords.mkdir(parents=True, exist_ok=True)
    for k, (P, X) in enumerate(zip(pg.patches, pg.coords)):
        io.write_embedding_binary(EmbeddingMatrix(X, P), io.patch_coords_path(coords, k))
    io.write_embedding_binary(prob.ground_truth, out / "truth.l2ge")
    _write_json(out / "transforms.json", {"scales": prob.scales, "rotations": prob.rotations,
                                         "translations": prob.translations, "sigma": prob.sigma})
    return {"nodes": nodes, "patches": pg.p, "patch_edges": pg.num_edges}


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="l2g", parents=[common],
                                     description="Patch-based graph embedding and stitching.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("patches", parents=[common], help="build the overlapping patch cover")
    p.add_argument("--graph", required=True)
    p.add_argument("--num-patches", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--min-overlap", type=int, required=True)
    p.add_argument("--max-overlap", type=int, required=True)
    p.add_argument("--target-degree", type=int, default=4)
    p.add_argument("--resistance", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--alg1-literal", action="store_true",
                   help="sample (k-1)p+1 extra edges instead of targeting mean degree k")
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", parents=[common], help="embed every patch")
    p.add_argument("--backend", choices=BUILTIN_BACKENDS, default="spectral")
    p.add_argument("--patches", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("align", parents=[common], help="align patch embeddings and stitch")
    p.add_argument("--patches", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--scale-sync", choices=("on", "off", "auto"), default="auto")
    p.add_argument("--hierarchical", type=int, default=0, metavar="N")
    p.add_argument("--role", choices=("dst",), default=None,
                   help="align destination coordinates of the svd backend")
    p.add_argument("--diagnostics", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-recon", parents=[common], help="edge-reconstruction AUC")
    p.add_argument("--emb", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--neg", type=int, default=None)

    p = sub.add_parser("eval-procrustes", parents=[common], help="full Procrustes error")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic patch problem")
    p.add_argument("--nodes", type=int, default=500)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--patches", type=int, default=10)
    p.add_argument("--overlap", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("anomaly", parents=[common], help="temporal anomaly scores")
    p.add_argument("--flows", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--lags", default=",".join(map(str, DEFAULT_LAGS)))
    p.add_argument("--min-obs", type=int, default=21)
    p.add_argument("--quantile", type=float, default=0.999)
    p.add_argument("--scale-sync", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", parents=[common], help="full pipeline with a run manifest")
    p.add_argument("--config", help="JSON file with pipeline settings")
    p.add_argument("--graph")
    p.add_argument("--out")
    p.add_argument("--dim", type=int)
    p.add_argument("--num-patches", type=int)
    p.add_argument("--min-overlap", type=int)
    p.add_argument("--max-overlap", type=int)
    p.add_argument("--target-degree", type=int)
    p.add_argument("--scale-sync", choices=("on", "off", "auto"))
    p.add_argument("--hierarchical", type=int)
    p.add_argument("--backend", choices=BUILTIN_BACKENDS)
    return parser


def _validate_patch_args(a):
    PipelineConfig(graph=a.graph, out=a.out, dim=a.dim, num_patches=a.num_patches,
                   min_overlap=a.min_overlap, max_overlap=a.max_overlap,
                   target_degree=a.target_degree).validate()


def _dispatch(a):
    seed = getattr(a, "seed", 0)
    jobs = getattr(a, "jobs", 1)
    cmd = a.command
    if cmd == "patches":
        _validate_patch_args(a)
        meta = stage_patches(a.graph, a.out, num_patches=a.num_patches, dim=a.dim,
                             min_overlap=a.min_overlap, max_overlap=a.max_overlap,
                             target_degree=a.target_degree, resistance=a.resistance,
                             literal=a.alg1_literal, seed=seed)
        print(json.dumps({"patches": meta["num_patches"], "patch_edges": meta["patch_edges"]}))
    elif cmd == "embed":
        if a.dim < 1:
            raise ConfigError("dim must be positive")
        stage_embed(a.patches, a.graph, a.out, dim=a.dim, backend=a.backend, seed=seed, jobs=jobs)
    elif cmd == "align":
        if a.hierarchical < 0:
            raise ConfigError("hierarchical cluster count must be non-negative")
        _, _, diag = stage_align(a.patches, a.coords, a.out, scale_sync=a.scale_sync,
                                 hierarchical=a.hierarchical, seed=seed, role=a.role,
                                 diagnostics=a.diagnostics)
        print(json.dumps({"wall_time": diag["wall_time"], "scale_sync": diag["scale_sync"]}))
    elif cmd == "eval-recon":
        if a.neg is not None and a.neg < 1:
            raise ConfigError("--neg must be positive")
        print(json.dumps(stage_eval(a.emb, a.graph, neg=a.neg, seed=seed)))
    elif cmd == "eval-procrustes":
        ea = io.read_embedding(_require_file(a.a, "embedding file"))
        eb = io.read_embedding(_require_file(a.b, "embedding file"))
        print(repr(procrustes_error(ea, eb)))
    elif cmd == "synth":
        print(json.dumps(stage_synth(a.out, nodes=a.nodes, dim=a.dim, patches=a.patches,
                                     overlap=a.overlap, noise=a.noise, seed=seed)))
    elif cmd == "anomaly":
        if a.dim < 1:
            raise ConfigError("dim must be positive")
        summary = stage_anomaly(a.flows, a.out, dim=a.dim, lags=_parse_lags(a.lags),
                                min_obs=a.min_obs, quantile=a.quantile,
                                scale_sync=a.scale_sync, seed=seed)
        print(json.dumps({r: v["total_outliers"] for r, v in summary["roles"].items()}))
    elif cmd == "run":
        overrides = {
            "graph": a.graph, "out": a.out, "dim": a.dim, "num_patches": a.num_patches,
            "min_overlap": a.min_overlap, "max_overlap": a.max_overlap,
            "target_degree": a.target_degree, "scale_sync": a.scale_sync,
            "hierarchical": a.hierarchical, "backend": a.backend,
        }
        if hasattr(a, "seed"):
            overrides["seed"] = a.seed
        if hasattr(a, "jobs"):
            overrides["jobs"] = a.jobs
        if a.config:
            cfg = PipelineConfig.from_json(_require_file(a.config, "config file"), **overrides)
        else:
            if a.graph is None or a.out is None:
                raise ConfigError("run needs --config or both --graph and --out")
            cfg = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
        manifest = run_pipeline(cfg)
        print(json.dumps({"timings": manifest["timings"], "eval": manifest["eval"]}))
    return 0


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(a, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(a)
    except PatchSyncError as exc:
        print(f"l2g: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"l2g: error: file not found: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
