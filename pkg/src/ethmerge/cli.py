"""Command-line entry point: ``ethmerge <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on operational errors,
in which case a single JSON line ``{"error": kind, "message": ...}`` goes to
stderr.  Every run writes a ``run.json`` provenance record next to its output.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import EthMergeError

log = logging.getLogger("ethmerge")

POW_WINDOW = (14_537_394, 15_537_393)
POS_WINDOW = (15_537_394, 16_537_393)
CORPUS_RANGE = (18_000_001, 18_020_000)
RANGES = {"pow": POW_WINDOW, "pos": POS_WINDOW, "corpus": CORPUS_RANGE}


@dataclass
class RunConfig:
    subcommand: str
    options: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    output: str = ""
    version: str = __version__
    kernel_backend: str = kernels.BACKEND

    def to_json(self) -> dict:
        return asdict(self)


def digest(path: str | os.PathLike) -> str:
    """sha256 of a file, or of a directory's files (names and contents, sorted)."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(x for x in p.rglob("*") if x.is_file() and not x.name.endswith("run.json")):
            h.update(str(f.relative_to(p)).encode("utf-8") + b"\0")
            h.update(f.read_bytes())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


def write_provenance(out: str | os.PathLike, cfg: RunConfig) -> Path:
    p = Path(out)
    target = p / "run.json" if p.is_dir() else p.with_name(p.name + ".run.json")
    cfg.output = str(out)
    target.write_text(json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return target


def _options(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _dump(obj, path: str | os.PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .ingest import BeaconApiSource, FixtureSource, JsonRpcSource, ingest, range_dir

    start, end = RANGES[args.range] if args.range else (args.start, args.end)
    if start is None or end is None:
        raise EthMergeError("give --range or both --start and --end")
    if args.fixture:
        execution = FixtureSource(args.fixture)
        consensus = execution
        inputs = {"fixture": digest(args.fixture)}
    else:
        rpc = args.rpc_url or os.environ.get("EXECUTION_RPC_URL")
        beacon = args.beacon_url or os.environ.get("BEACON_API_URL")
        if not rpc:
            raise EthMergeError("no execution endpoint: set EXECUTION_RPC_URL or --rpc-url")
        execution = JsonRpcSource(rpc)
        consensus = BeaconApiSource(beacon) if beacon else None
        inputs = {"rpc_url": rpc, "beacon_url": beacon}
    summary = ingest(start, end, execution, args.store, consensus, workers=args.workers)
    out = range_dir(args.store, start, end)
    write_provenance(out, RunConfig("ingest", _options(args), inputs=inputs))
    print(json.dumps({**asdict(summary), "gaps": [list(g) for g in summary.gaps], "dir": str(out)},
                     sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthChainConfig, SynthFeeConfig, gen_chain, gen_fee_chain, write_fixture

    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.mode == "chain":
        data.setdefault("n_blocks", 1000)
        data.setdefault("producer_weights", [1.0] * 10)
        cfg = SynthChainConfig.from_dict(data)
        chain = gen_chain(cfg)
    else:
        cfg = SynthFeeConfig.from_dict(data)
        chain = gen_fee_chain(cfg)
    write_fixture(chain, args.out)
    _dump({"mode": args.mode, "config": asdict(cfg)}, Path(args.out) / "synth_config.json")
    inputs = {"config": digest(args.config)} if args.config else {}
    write_provenance(args.out, RunConfig("synth", _options(args), seeds={"seed": cfg.seed}, inputs=inputs))
    print(json.dumps({"blocks": len(chain.headers), "slots": len(chain.slots), "txs": len(chain.txs),
                      "out": args.out}, sort_keys=True))
    return 0


def cmd_map_slot(args) -> int:
    from .ingest import BeaconApiSource, load_records
    from .slotmap import NotFound, SlotResolver, bsmap

    if args.store:
        _, _, slots = load_records(args.store)
        resolver = SlotResolver.from_records(slots)
    else:
        beacon = args.beacon_url or os.environ.get("BEACON_API_URL")
        if not beacon:
            raise EthMergeError("no beacon endpoint: set BEACON_API_URL, --beacon-url or --store")
        resolver = SlotResolver.from_source(BeaconApiSource(beacon))
    head = resolver.head if args.head is None else args.head
    slot = bsmap(head, args.block, resolver)
    print(-1 if slot is NotFound else slot)
    return 0


def cmd_build_dataset(args) -> int:
    from .dataset import CleaningPolicy, FeatureConfig, dataset_from_records
    from .ingest import load_records

    headers, txs, slots = load_records(args.store)
    cfg = FeatureConfig(lag_windows=[int(x) for x in args.lags.split(",")],
                        train_fraction=args.train_fraction,
                        cleaning=CleaningPolicy(args.z, args.fence))
    ds = dataset_from_records(headers, txs, slots, cfg)
    ds.save(args.out)
    write_provenance(args.out, RunConfig("build-dataset", _options(args), inputs={"store": digest(args.store)}))
    print(json.dumps({"rows": len(ds), "train_rows": ds.split_index, "features": len(ds.feature_names),
                      "out": args.out}, sort_keys=True))
    return 0


def _era_windows(headers, windows, merge_block):
    from .miners import era_window

    out = {}
    for era in ("pow", "pos"):
        for w in windows:
            hs = era_window(headers, w, era, merge_block)
            if hs:
                out[f"{era}_{w}"] = (era, w, hs)
    return out


def cmd_analyze_miners(args) -> int:
    from .ingest import load_records
    from .miners import analyze_window

    headers, _, _ = load_records(args.store)
    windows = [int(x) for x in args.windows.split(",")]
    report = {"merge_block": args.merge_block, "windows": {}}
    rows = []
    for key, (era, w, hs) in _era_windows(headers, windows, args.merge_block).items():
        res = analyze_window(hs, k=args.k, sample=args.sample, from_end=(era == "pow"))
        res.update({"era": era, "requested_size": w})
        report["windows"][key] = res
        for p, r in res.get("randomness", {}).get("per_producer", {}).items():
            rows.append({"window": key, "producer": p, **r})
    _dump(report, args.out)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["window", "producer", "adjacency_rate", "max_run_length",
                                               "normalized_span", "n"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    write_provenance(args.out, RunConfig("analyze-miners", _options(args), inputs={"store": digest(args.store)}))
    summary = {k: {"unique_producers": v["unique_producers"], "large": v["categories"]["large"],
                   "medium": v["categories"]["medium"], "small": v["categories"]["small"]}
               for k, v in report["windows"].items()}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_hp(items) -> dict:
    hp = {}
    for item in items or []:
        if "=" not in item:
            raise EthMergeError(f"hyperparameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            hp[k] = json.loads(v)
        except json.JSONDecodeError:
            hp[k] = v
    return hp


def cmd_train(args) -> int:
    from .dataset import Dataset
    from .predictor import ModelSpec, save_model, train

    ds = Dataset.load(args.dataset)
    spec = ModelSpec(args.model, _parse_hp(args.hp), args.seed, args.target)
    model = train(spec, ds, n_jobs=args.jobs)
    save_model(model, args.out)
    write_provenance(args.out, RunConfig("train", _options(args), seeds={"seed": args.seed},
                                         inputs={"dataset": digest(args.dataset)}))
    print(json.dumps({"kind": spec.kind, "target": spec.target, "n_train": model.metadata["n_train"],
                      "out": args.out}, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    from .dataset import Dataset
    from .metrics import evaluate
    from .predictor import load_model, predict
    from .report import write_predictions

    model = load_model(args.model)
    ds = Dataset.load(args.dataset).partition(args.split)
    target = model.spec.target
    y = ds.target(target)
    pred = predict(model, ds.X, ds.feature_names)
    rep = evaluate(y, pred, target, model.spec.kind).to_json()
    est = ds.estimates.get(target)
    if est is not None and np.isfinite(est).any():
        ok = np.isfinite(est)
        rep["baseline"] = evaluate(y[ok], est[ok], target, "baseline_estimate").to_json()
    out = Path(args.out)
    pred_file = out.with_name(out.stem + ".predictions.csv")
    rep["split"] = args.split
    rep["predictions_file"] = pred_file.name
    _dump(rep, out)
    ts = ds.targets["txn_time"]
    write_predictions(pred_file, [
        {"tx_hash": ds.tx_hashes[i], "timestamp": int(ts[i]), "actual": float(y[i]),
         "estimated": float(est[i]) if est is not None else float("nan"), "predicted": float(pred[i])}
        for i in range(len(ds))])
    write_provenance(out, RunConfig("evaluate", _options(args),
                                    inputs={"model": digest(args.model), "dataset": digest(args.dataset)}))
    print(json.dumps({k: rep[k] for k in ("rmse", "mae", "r2", "n")}, sort_keys=True))
    return 0


def _read_feature_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    return header, body


def _select(model, header, body):
    from .errors import FeatureMismatch

    names = model.feature_names
    present = [h for h in header if h in names]
    if present != names:
        raise FeatureMismatch(f"expected feature columns {names} in order, got {present}")
    cols = [header.index(n) for n in names]
    return np.array([[float(r[c]) for c in cols] for r in body], dtype=np.float64).reshape(len(body), len(cols))


def cmd_predict(args) -> int:
    from .predictor import load_model, predict

    model = load_model(args.model)
    header, body = _read_feature_csv(args.rows)
    pred = predict(model, _select(model, header, body))
    key = header.index("tx_hash") if "tx_hash" in header else None
    lines = ["row,prediction"] + [f"{body[i][key] if key is not None else i},{p!r}"
                                  for i, p in enumerate(pred.tolist())]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_provenance(args.out, RunConfig("predict", _options(args),
                                             inputs={"model": digest(args.model), "rows": digest(args.rows)}))
    else:
        sys.stdout.write(text)
    return 0


def cmd_recommend(args) -> int:
    from .predictor import load_model, recommend_priority_fee, standardize

    model = load_model(args.model)
    ctx = json.loads(Path(args.context).read_text(encoding="utf-8"))
    if "raw" in ctx:
        row = standardize(model, ctx["raw"])
    else:
        feats = ctx.get("features", ctx)
        row = {k: feats[k] for k in feats}
    fee = recommend_priority_fee(model, row, args.q)
    print(json.dumps({"q": args.q, "priority_fee_gwei": fee, "priority_fee_wei": int(round(fee * 1e9))},
                     sort_keys=True))
    return 0


def cmd_besttime(args) -> int:
    from .predictor import load_model, predict_min_fee_time

    model = load_model(args.model)
    header, body = _read_feature_csv(args.horizon)
    if "timestamp" not in header:
        raise EthMergeError("horizon file needs a timestamp column")
    X = _select(model, header, body)
    ti = header.index("timestamp")
    ts = predict_min_fee_time(model, [(int(float(r[ti])), X[i]) for i, r in enumerate(body)])
    print(ts)
    return 0


def cmd_report(args) -> int:
    from .report import read_predictions, write_report

    ev = json.loads(Path(args.eval).read_text(encoding="utf-8"))
    rows = read_predictions(Path(args.eval).with_name(ev["predictions_file"]))
    title = f"{ev.get('model_kind', '')} {ev.get('target', '')}: actual vs estimated vs predicted".strip()
    res = write_report(rows, args.out, args.sample, title=title, y_label=f"{ev.get('target', '')} (gwei)")
    write_provenance(args.out, RunConfig("report", _options(args), inputs={"eval": digest(args.eval)}))
    print(json.dumps(res, sort_keys=True))
    return 0


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ethmerge", description="Ethereum PoW/PoS producer and fee analytics.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fetch blocks, transactions and slots into a store")
    p.add_argument("--store", required=True)
    p.add_argument("--start", type=int)
    p.add_argument("--end", type=int)
    p.add_argument("--range", choices=sorted(RANGES))
    p.add_argument("--rpc-url")
    p.add_argument("--beacon-url")
    p.add_argument("--fixture", help="read from a jsonl fixture directory instead of endpoints")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic fixture")
    p.add_argument("--mode", choices=("chain", "fees"), required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("map-slot", help="beacon slot carrying an execution block (-1 if none)")
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--store", "--fixture", dest="store")
    p.add_argument("--beacon-url")
    p.add_argument("--head", type=int)
    p.set_defaults(func=cmd_map_slot)

    p = sub.add_parser("build-dataset", help="derive fees, clean and build features")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--z", type=float, default=3.0)
    p.add_argument("--fence", type=float, default=1.5)
    p.add_argument("--lags", default="10,100,1000")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("analyze-miners", help="producer counts, categories and randomness")
    p.add_argument("--store", required=True)
    p.add_argument("--windows", default="100000,500000,1000000")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--sample", type=int, default=50)
    p.add_argument("--merge-block", type=int, default=POS_WINDOW[0])
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_analyze_miners)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", default="txn_fee")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hp", action="append", metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict for feature rows")
    p.add_argument("--model", required=True)
    p.add_argument("--rows", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("recommend", help="recommended priority fee")
    p.add_argument("--model", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--q", type=float, default=0.9)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("besttime", help="timestamp with the lowest predicted fee")
    p.add_argument("--model", required=True)
    p.add_argument("--horizon", required=True)
    p.set_defaults(func=cmd_besttime)

    p = sub.add_parser("report", help="CSV and SVG of a systematic sample")
    p.add_argument("--eval", required=True)
    p.add_argument("--sample", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EthMergeError as e:
        err = {"error": e.kind, "message": str(e)}
    except (OSError, ValueError, KeyError) as e:
        err = {"error": type(e).__name__, "message": str(e)}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
