"""Command-line entry point: ``tmpgnn {synth,centrality,embed,classify,impute}``.

Every run writes one JSON manifest holding the resolved configuration, its
hash, the master seed, SHA-256 digests of the input files, the tool
version and the wall-clock time. Passing a manifest back through
``--config`` replays the run with the same configuration.

Exit codes: 0 on success, 1 on invalid input or usage, 2 on runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .embedder import TMPGNNEmbedder
from .graph import GraphParseError, SynthConfig, load_graph, save_graph, synth_graph
from .imputation import ARCH_MRNN, ARCHITECTURES, EdgeImputer, mask_remove
from .pgnn import FAST, FULL, MULTI, SINGLE
from .spectral import CHAIN, TELEPORT, SupraCentrality
from .tasks import CENTERED, DOT, MULTIGRAPH_NODE_SPLIT, SINGLE_SUPRAGRAPH, relative_improvement
from .validation import GraphValidationError, substream

THREADS_ENV = "SUPRA_EMBED_THREADS"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

# options that never enter the resolved configuration
_RUN_ONLY = {"command", "config", "manifest", "handler"}


class UsageError(Exception):
    """Bad command line; reported with usage text and exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# helpers


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _root(path):
    return os.path.splitext(str(path))[0]


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _fmt(x):
    return repr(float(x))


def _input_files(path):
    """The graph file plus whichever sidecars exist next to it."""
    files = [str(path)]
    for suffix in (".labels.csv", ".meta.json"):
        side = _root(path) + suffix
        if os.path.exists(side):
            files.append(side)
    return files


def _parse_omega(text):
    if str(text).lower() == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"omega must be 'auto' or a number, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("omega must be nonnegative")
    return value


def _parse_stream(text):
    return "mean" if str(text).lower() == "mean" else int(text)


def _parse_grid(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau grid {text!r}")


@contextlib.contextmanager
def _thread_limit():
    """Cap BLAS/OpenMP threads when ``SUPRA_EMBED_THREADS`` is set."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        yield None
        return
    try:
        n = int(value)
    except ValueError:
        raise GraphValidationError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    if n < 1:
        raise GraphValidationError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield n


# --------------------------------------------------------------------------
# subcommands; each returns (outputs written, input files read)


def run_synth(cfg):
    synth = SynthConfig(
        num_nodes=cfg["nodes"], num_layers=cfg["layers"], num_streams=cfg["streams"],
        communities=cfg["communities"], p_in=cfg["p_in"], p_out=cfg["p_out"],
        rewire=cfg["rewire"], signal=cfg["signal"], period=cfg["period"],
        community_signal=cfg["community_signal"], shared_noise=cfg["shared_noise"],
        noise=cfg["noise"], directed=cfg["directed"], seed=cfg["seed"])
    g = synth_graph(synth)
    out = save_graph(g, cfg["output"])
    written = [out, _root(out) + ".meta.json"]
    if g.node_labels is not None:
        written.append(_root(out) + ".labels.csv")
    return written, []


def _load(cfg):
    return load_graph(cfg["graph"])


def run_centrality(cfg):
    g = _load(cfg)
    est = SupraCentrality(omega=cfg["omega"], coupling=cfg["coupling"], gamma=cfg["gamma"],
                          delta=cfg["delta"], stream=cfg["stream"]).fit(g)
    summary = {
        "omega": est.omega_,
        "lambda_max": est.lambda_max_,
        "mlc": est.mlc_.tolist(),
        "omega_history": [list(map(float, h)) for h in est.omega_history_],
    }
    written = []
    if cfg["output"] is None:
        _write_json(summary)
    else:
        with open(cfg["output"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "layer", "joint", "cc"])
            for n in range(g.num_nodes):
                for t in range(g.num_layers):
                    w.writerow([n, t, _fmt(est.joint_[n, t]), _fmt(est.cc_[n, t])])
        json_path = _root(cfg["output"]) + ".json"
        _write_json(summary, json_path)
        written = [cfg["output"], json_path]
    return written, _input_files(cfg["graph"])


def _embedder(cfg, epochs):
    return TMPGNNEmbedder(
        input=cfg["input"], scheme=cfg.get("scheme"), n_layers=cfg["n_layers"],
        hidden_dim=cfg["hidden"], embed_dim=cfg["embed_dim"], anchor_copies=cfg["anchor_copies"],
        q=cfg["q"], mode=cfg["mode"], cc_numerator=cfg["cc_numerator"],
        intra_only=cfg["intra_only"], omega=cfg["omega"], coupling=cfg["coupling"],
        gamma=cfg["gamma"], delta=cfg["delta"], stream=cfg["stream"], epochs=epochs,
        lr=cfg["lr"], readout=cfg["readout"], seed=cfg["seed"])


def run_embed(cfg):
    g = _load(cfg)
    epochs = cfg["epochs"] if g.node_labels is not None else 0
    est = _embedder(cfg, epochs).fit(g)
    z = est.transform()
    N, T, d = z.shape
    with open(cfg["output"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "layer"] + [f"z_{k}" for k in range(d)])
        for n in range(N):
            for t in range(T):
                w.writerow([n, t] + [_fmt(x) for x in z[n, t]])
    return [cfg["output"]], _input_files(cfg["graph"])


def run_classify(cfg):
    g = _load(cfg)
    if g.node_labels is None or not np.any(g.node_labels >= 0):
        raise GraphValidationError("classification needs community labels (a .labels.csv sidecar)")
    est = _embedder(cfg, cfg["epochs"]).fit(g)
    m = est.metrics_
    report = {"auc_test": m["auc_test"], "auc_val": m["auc_val"], "epochs": m["epochs"],
              "best_epoch": m["best_epoch"], "seed": cfg["seed"], "input": cfg["input"],
              "scheme": est.split_.scheme}
    _write_json(report, cfg["output"])
    return ([cfg["output"]] if cfg["output"] else []), _input_files(cfg["graph"])


def _impute_one(g, arch, tau, cfg):
    series = mask_remove(g, tau, substream(cfg["seed"], "mask"))
    est = EdgeImputer(arch=arch, hidden_dim=cfg["hidden"], embed_dim=cfg["embed_dim"],
                      anchor_copies=cfg["anchor_copies"], q=cfg["q"], mode=cfg["mode"],
                      freeze_embeddings=cfg["freeze_embeddings"], hide_rate=cfg["hide_rate"],
                      epochs=cfg["epochs"], lr=cfg["lr"], seed=cfg["seed"])
    return est.fit(series, g).evaluate()


def run_impute(cfg):
    g = _load(cfg)
    if g.num_streams == 0:
        raise GraphValidationError("imputation needs at least one edge stream")
    taus = cfg["grid"] if cfg["grid"] else [cfg["tau"]]
    reports = []
    for tau in taus:
        if not 0.0 < tau < 1.0:
            raise GraphValidationError(f"tau must lie in (0, 1), got {tau}")
        metrics = _impute_one(g, cfg["arch"], tau, cfg)
        if cfg["arch"] == ARCH_MRNN:
            improvement = 0.0
        else:
            base = _impute_one(g, ARCH_MRNN, tau, cfg)["mae"]
            improvement = relative_improvement(metrics["mae"], base) if base > 0 else None
            if improvement is not None and metrics["mae"] > base:
                improvement = -improvement
        reports.append({"arch": cfg["arch"], "tau": tau, "mae": metrics["mae"],
                        "rmse": metrics["rmse"], "improvement_vs_mrnn_pct": improvement,
                        "seed": cfg["seed"]})
    _write_json(reports[0] if not cfg["grid"] else reports, cfg["output"])
    return ([cfg["output"]] if cfg["output"] else []), _input_files(cfg["graph"])


# --------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--config", help="JSON file of option overrides, or a run manifest")
    p.add_argument("--manifest", help="manifest path (default: next to the output)")


def _coupling_opts(p):
    p.add_argument("--omega", type=_parse_omega, default="auto")
    p.add_argument("--coupling", choices=[CHAIN, TELEPORT], default=CHAIN)
    p.add_argument("--gamma", type=float, default=None, help="teleportation probability")
    p.add_argument("--delta", type=int, default=1, help="layer spacing of the chain coupling")
    p.add_argument("--stream", type=_parse_stream, default=0,
                   help="edge stream used as adjacency weight, or 'mean'")


def _model_opts(p):
    p.add_argument("--input", choices=[SINGLE, MULTI], default=SINGLE)
    p.add_argument("--scheme", choices=[SINGLE_SUPRAGRAPH, MULTIGRAPH_NODE_SPLIT], default=None)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--anchor-copies", type=int, default=1)
    p.add_argument("--q", type=int, default=2, help="hop cutoff of truncated distances")
    p.add_argument("--mode", choices=[FAST, FULL], default=FAST)
    p.add_argument("--cc-numerator", choices=["sum", "max"], default="sum",
                   help="combine nearby anchor members' centralities by sum or max")
    p.add_argument("--intra-only", action="store_true",
                   help="exclude inter-layer edges from shortest-path distances")
    p.add_argument("--readout", choices=[CENTERED, DOT], default=CENTERED)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    _coupling_opts(p)


def build_parser():
    parser = _Parser(prog="tmpgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labeled synthetic temporal multilayer graph")
    _common(p)
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--streams", type=int, default=2)
    p.add_argument("--communities", type=int, default=2)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.05)
    p.add_argument("--rewire", type=float, default=0.1)
    p.add_argument("--signal", choices=["sinusoid", "ar1"], default="sinusoid")
    p.add_argument("--period", type=float, default=8.0)
    p.add_argument("--community-signal", type=float, default=1.0)
    p.add_argument("--shared-noise", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--directed", action="store_true")
    p.add_argument("-o", "--output", required=False, default=None)
    p.set_defaults(handler=run_synth)

    p = sub.add_parser("centrality", help="supracentrality, omega selection and CC")
    _common(p)
    p.add_argument("graph", nargs="?")
    _coupling_opts(p)
    p.add_argument("-o", "--output", default=None, help="CSV of node,layer,joint,cc")
    p.set_defaults(handler=run_centrality)

    p = sub.add_parser("embed", help="TMP-GNN supraembedding as CSV")
    _common(p)
    p.add_argument("graph", nargs="?")
    _model_opts(p)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(handler=run_embed)

    p = sub.add_parser("classify", help="pairwise node classification ROC AUC")
    _common(p)
    p.add_argument("graph", nargs="?")
    _model_opts(p)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(handler=run_classify)

    p = sub.add_parser("impute", help="missing edge-feature estimation MAE")
    _common(p)
    p.add_argument("graph", nargs="?")
    p.add_argument("--arch", choices=list(ARCHITECTURES), default="etmpgnn1")
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--grid", type=_parse_grid, default=None)
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--anchor-copies", type=int, default=1)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--mode", choices=[FAST, FULL], default=FAST)
    p.add_argument("--freeze-embeddings", action="store_true")
    p.add_argument("--hide-rate", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(handler=run_impute)
    return parser


def _load_config(path, command, defaults):
    """Overrides from a plain JSON object or from a run manifest."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphValidationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise GraphValidationError(f"config {path} must hold a JSON object")
    if "subcommand" in data and "config" in data:
        if data["subcommand"] != command:
            raise GraphValidationError(
                f"manifest {path} records subcommand {data['subcommand']!r}, not {command!r}")
        data = data["config"]
    unknown = sorted(set(data) - set(defaults))
    if unknown:
        raise GraphValidationError(f"unknown config keys for {command}: {unknown}")
    return data


def resolve(args, parser):
    cfg = {k: v for k, v in vars(args).items() if k not in _RUN_ONLY}
    if args.config:
        cfg.update(_load_config(args.config, args.command, cfg))
    return cfg


def _manifest_path(args, cfg):
    if args.manifest:
        return args.manifest
    if cfg.get("output"):
        return _root(cfg["output"]) + ".manifest.json"
    return f"{args.command}.manifest.json"


def _require(cfg, command):
    if command == "synth" and not cfg.get("output"):
        raise UsageError("synth: error: the following arguments are required: -o/--output")
    if command == "embed" and not cfg.get("output"):
        raise UsageError("embed: error: the following arguments are required: -o/--output")
    if command != "synth" and not cfg.get("graph"):
        raise UsageError(f"{command}: error: the following arguments are required: graph")


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("tmpgnn: error: a subcommand is required")
        cfg = resolve(args, parser)
        _require(cfg, args.command)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (GraphValidationError, OSError) as exc:
        print(f"tmpgnn: error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    started = time.perf_counter()
    try:
        with _thread_limit() as threads:
            written, inputs = args.handler(cfg)
    except (GraphParseError, GraphValidationError, ValueError, TypeError, OSError) as exc:
        print(f"tmpgnn {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"tmpgnn {args.command}: runtime failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME

    manifest = {
        "subcommand": args.command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seeds": {"master": cfg["seed"]},
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in written},
        "version": __version__,
        "threads": threads,
        "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    _write_json(manifest, _manifest_path(args, cfg))
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
