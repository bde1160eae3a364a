"""Command-line interface: ``tomoforge {gen,train,mc,run,eval}``.

Exit codes: 0 success, 1 user error (bad arguments, config or input
files), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen, qcore, qmc
from .errors import ConfigError, SchemaError, TomoforgeError

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- parsing helpers

_PI = re.compile(r"^\s*(?:(\d+(?:\.\d*)?)\s*\*?\s*)?pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


def parse_sigma(text: str) -> float:
    """``"pi/6"``, ``"2pi/3"``, ``"0.5"`` -> float."""
    m = _PI.match(text.lower())
    if m:
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"sigma: cannot parse {text!r}") from None


def parse_ks(text: str) -> list[int]:
    """``"1..26"``, ``"1,5,10"`` or ``"7"`` -> list of ints."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError("k: empty list")
    return out


def parse_ratios(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"split: cannot parse {text!r}") from None
    if len(vals) != 3 or min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-9:
        raise ConfigError(f"split: ratios must be three non-negative numbers summing to 1, got {text!r}")
    return vals


def apply_threads(n: int | None):
    n = n or int(os.environ.get("TOMOFORGE_THREADS", "0") or 0)
    if n > 0:
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _file_entry(path):
    from .pipeline import sha256_file
    return {"path": Path(path).name, "sha256": sha256_file(path)}


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    ratios = parse_ratios(args.split)
    if args.n is not None and args.n < 1:
        raise ConfigError("n: must be >= 1")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    manifest = {"schema": "tomoforge.gen", "version": 1, "kind": args.kind, "seed": args.seed,
                "split": list(ratios), "preset": "paper" if args.paper_scale else "desk"}
    if not args.noisy:
        n = args.n or (1_000_000 if args.paper_scale else 50_000)
        ds = datagen.gen_noiseless(args.kind, n, seed=args.seed, split_ratios=ratios)
        datagen.save(ds, out)
        manifest.update(noisy=False, n_rows=ds.n_rows, files=[_file_entry(out)])
        print(f"wrote {ds.n_rows} rows to {out}")
    else:
        sigma = parse_sigma(args.sigma)
        n_states = args.n or (3000 if args.paper_scale else 300)
        cfg = datagen.GenConfig(split_ratios=ratios, master_seed=args.seed)
        alln, non = datagen.gen_noisy(args.kind, n_states, cfg, sigma, seed=args.seed,
                                      rotations=args.rotations)
        ext = out.suffix or ".csv"
        paths = {"allnoise": Path(f"{stem}_allnoise{ext}"), "nonoise": Path(f"{stem}_nonoise{ext}"),
                 "tau": Path(f"{stem}_tau{ext}")}
        x_only = dict(Y=None)
        datagen.save(replace(alln, **x_only), paths["allnoise"])
        datagen.save(replace(non, **x_only), paths["nonoise"])
        datagen.save(replace(alln, X=None), paths["tau"])
        manifest.update(noisy=True, sigma=sigma, n_states=n_states, rotations=args.rotations,
                        n_rows=alln.n_rows, distribution_mix=alln.meta["distribution_mix"],
                        files=[_file_entry(p) for p in paths.values()])
        for name, p in paths.items():
            print(f"wrote {alln.n_rows} {name} rows to {p}")
    if not args.paper_scale:
        manifest["deviations"] = ["desk-scale row counts (full scale: 1M noiseless states per kind, "
                                  "3000 noisy states per sigma)"]
    _write_json(f"{stem}.manifest.json", manifest)
    return EXIT_OK


# ---------------------------------------------------------------- train

def _lineage_cfg(args):
    from .lineage import LineageConfig
    ws = Path(args.workspace)
    saved = ws / "lineage.json"
    if saved.exists():
        d = json.loads(saved.read_text())
        gen = datagen.GenConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in d.pop("gen").items()})
        from .gbdt import BoostParams
        d["boost"] = BoostParams(**d["boost"])
        return LineageConfig(gen=gen, **d)
    gen_kw = {}
    if args.n_states is not None:
        gen_kw.update(n_pure=args.n_states, n_mixed=args.n_states)
    if args.noisy_states is not None:
        gen_kw["noisy_states_per_sigma"] = args.noisy_states
    if args.rotations is not None:
        base = datagen.GenConfig()
        gen_kw.update(rotations_per_state=args.rotations, distribution_mix=base.scaled_mix(args.rotations))
    gen_kw["master_seed"] = args.seed
    if args.paper_scale:
        return LineageConfig.paper(gen=datagen.GenConfig.paper(**gen_kw), seed=args.seed)
    return LineageConfig(gen=datagen.GenConfig(**gen_kw), seed=args.seed)


def cmd_train(args) -> int:
    from .lineage import Workspace
    ws = Workspace(args.workspace, _lineage_cfg(args), log=print if args.verbose else None)
    if args.role == "all":
        bundle = ws.build_all()
        path = bundle.save(Path(args.workspace) / "bundle")
        print(f"bundle manifest written to {path}")
        return EXIT_OK
    kind = None if args.kind in (None, "all") else args.kind
    if args.role == "meta":
        kinds = [kind] if kind else ["pure", "mixed"]
        missing = [k for k in kinds if not ws.valpreds_present(k)]
        if missing:
            print(f"error: validation predictions absent for {', '.join(missing)}; "
                  "train reg-conv1d, reg-conv2d and reg-gbdt first", file=sys.stderr)
            return EXIT_USER
    ws.run_role(args.role, kind)
    if args.role == "reg-gbdt":
        for k in ([kind] if kind else ["pure", "mixed"]):
            m = _gbdt_metrics(ws, k)
            _write_json(ws.model_dir / f"metrics_gbdt_{k}.json", m)
            print(f"gbdt {k}: test mse {m['test_mse']:.3e}, fidelity {m['fidelity_mean']:.4f}")
    print(f"trained role {args.role} in {args.workspace}")
    return EXIT_OK


def _gbdt_metrics(ws, kind):
    ds = ws.dataset(f"noiseless_{kind}")
    te = ds.split == "test"
    P = ws.gbdt(kind).predict(ds.X[te])
    f = qcore.fidelity(qcore.tau_to_rho(P), qcore.tau_to_rho(ds.Y[te]))
    return {"test_mse": float(np.mean((P - ds.Y[te]) ** 2)), "fidelity_mean": float(np.mean(f)),
            "fidelity_std": float(np.std(f)), "n_test": int(te.sum())}


# ---------------------------------------------------------------- mc

def _load_bundle(path):
    from .pipeline import PipelineBundle
    p = Path(path)
    if (p / "bundle" / "manifest.json").exists():
        p = p / "bundle"
    return PipelineBundle.load(p)


def _noisy_copy(X, Y, sigma, seed):
    """Rotation-noise measurements of the states behind ``Y`` (normal angle noise)."""
    from . import noise
    rho = qcore.tau_to_rho(Y)
    rng = np.random.default_rng(seed)
    spec = noise.NoiseSpec("normal", sigma)
    return noise.measure_rotated(rho, noise.draw_angles(spec, len(rho), rng))


def cmd_mc(args) -> int:
    from .impute import mice_impute
    from .pipeline import run_batch
    if args.masks is not None and args.masks < 1:
        raise ConfigError("masks: must be >= 1")
    ks = parse_ks(args.k)
    if any(not 0 <= k <= 35 for k in ks):
        raise ConfigError("k: values must be in [0, 35]")
    ds = datagen.load(args.data)
    if ds.X is None:
        raise SchemaError("mc needs measurement columns")
    X = ds.X if args.rows is None else ds.X[:args.rows]
    Y = None if ds.Y is None else (ds.Y if args.rows is None else ds.Y[:args.rows])
    if args.noise:
        if Y is None:
            raise SchemaError("--noise needs tau columns to rebuild the states")
        X = _noisy_copy(X, Y, parse_sigma(args.noise), args.seed)
    bundle = _load_bundle(args.bundle)
    schedule = qmc.PAPER_SCHEDULE if args.paper_scale else qmc.DESK_SCHEDULE
    seeds = iter(range(10 ** 6))

    if args.metric == "mse":
        def recover(Xm):
            return mice_impute(Xm, bundle.imputer, seed=args.seed * 7919 + next(seeds))
        metric = qmc.mse
    else:
        if Y is None:
            raise SchemaError("fidelity metric needs tau columns")
        rho_true = qcore.tau_to_rho(Y)

        def recover(Xm):
            return run_batch(Xm, bundle, seed=args.seed * 7919 + next(seeds), denoise=args.denoise).rho

        def metric(_, rho):
            return float(np.mean(qcore.fidelity(rho, rho_true)))
    est = [qmc.mc_estimate(X, k, metric, recover, args.masks, schedule) for k in ks]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    qmc.write_sweep_csv(out, est)
    summary = {"metric": args.metric, "k": ks, "n_rows": int(len(X)), "noise": args.noise,
               "schedule": [schedule.step, schedule.cap] if args.masks is None else None,
               "masks": args.masks, "seed": args.seed}
    if args.metric == "mse" and len(ks) >= 2:
        a = qmc.fit_quadratic_no_intercept(ks, [e.mean for e in est])
        summary["quadratic_a"] = a
        print(f"quadratic coefficient a = {a:.4e}")
    _write_json(str(out) + ".json", summary)
    print(f"wrote {len(est)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- run

def cmd_run(args) -> int:
    from .errors import AllMissingRow
    from .pipeline import run_batch, write_reports_csv
    X = datagen.load_measurements_csv(args.input)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: list = []
    if len(X):
        bundle = _load_bundle(args.bundle)
        ok = ~np.all(np.isnan(X), axis=1) & (np.isnan(X).sum(axis=1) <= 35)
        reports = {}
        if ok.any():
            res = run_batch(X[ok], bundle, seed=args.seed, denoise=args.denoise)
            for j, i in enumerate(np.flatnonzero(ok)):
                reports[int(i)] = res.report(j)
        for i in range(len(X)):
            results.append((i, reports.get(i, str(AllMissingRow("row has no observed measurements")))))
    docs = []
    for i, r in results:
        d = {"row": i, "status": "error", "error": r} if isinstance(r, str) else {"row": i, "status": "ok", **r.to_dict()}
        if not args.timings and "timings" in d:
            d.pop("timings")
        docs.append(d)
    _write_json(out / "reports.json", docs)
    write_reports_csv(out / "summary.csv", results)
    n_ok = sum(1 for _, r in results if not isinstance(r, str))
    print(f"{len(results)} rows, {n_ok} estimated, {len(results) - n_ok} failed")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    import csv
    from .pipeline import evaluate
    ds = datagen.load(args.data)
    if ds.X is None or ds.Y is None:
        raise SchemaError("eval needs measurement and tau columns")
    X, Y = ds.X, ds.Y
    if args.split != "all":
        sel = ds.split == args.split
        X, Y = X[sel], Y[sel]
    bundle = _load_bundle(args.bundle)
    rows = []
    sigmas = [parse_sigma(s) for s in args.noise.split(",")] if args.noise else [None]
    for s in sigmas:
        Xs = X if s is None else _noisy_copy(X, Y, s, args.seed)
        for mode in args.denoise.split(","):
            m = evaluate(Xs, bundle, Y, seed=args.seed, denoise=mode)
            rows.append({"sigma": 0.0 if s is None else s, "denoise": mode, "n": m["n"],
                         "fidelity_mean": m["fidelity_mean"], "fidelity_std": m["fidelity_std"],
                         "tau_mse": m["tau_mse"], "denoised_fraction": m["denoised_fraction"],
                         "pure_fraction": m["pure_fraction"]})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tomoforge", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: $TOMOFORGE_THREADS)")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="simulate measurement datasets")
    g.add_argument("--kind", choices=["pure", "mixed"], default="pure")
    g.add_argument("--n", type=int, default=None, help="states (noiseless rows or noisy source states)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="0.9,0.05,0.05")
    g.add_argument("--noisy", action="store_true")
    g.add_argument("--sigma", default="pi/6")
    g.add_argument("--rotations", type=int, default=400)
    g.add_argument("--out", default="data/dataset.csv")
    g.add_argument("--paper-scale", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one role of the lineage")
    t.add_argument("--role", required=True,
                   choices=["ae", "denoise", "isnoise", "ispure", "reg-conv1d", "reg-conv2d",
                            "reg-gbdt", "imputer", "meta", "all"])
    t.add_argument("--kind", choices=["pure", "mixed", "both", "all"], default=None)
    t.add_argument("--workspace", default="workspace")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--paper-scale", action="store_true")
    t.add_argument("--n-states", type=int, default=None, help="noiseless states per kind")
    t.add_argument("--noisy-states", type=int, default=None, help="noisy source states per sigma")
    t.add_argument("--rotations", type=int, default=None)
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("mc", help="quasi-Monte-Carlo missing-measurement sweep")
    m.add_argument("--bundle", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--metric", choices=["mse", "fidelity"], default="mse")
    m.add_argument("--k", default="1..26")
    m.add_argument("--masks", type=int, default=None, help="masks per k (default: schedule)")
    m.add_argument("--rows", type=int, default=None)
    m.add_argument("--noise", default=None, help="rotation-noise sigma applied before masking")
    m.add_argument("--denoise", choices=["auto", "on", "off"], default="auto")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--paper-scale", action="store_true")
    m.add_argument("--out", default="mc.csv")
    m.set_defaults(func=cmd_mc)

    r = sub.add_parser("run", help="estimate states for measurement rows")
    r.add_argument("--bundle", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out-dir", default="reports")
    r.add_argument("--denoise", choices=["auto", "on", "off"], default="auto")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--timings", action="store_true", help="include wall-clock timings in JSON")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="fidelity table for a labelled dataset")
    e.add_argument("--bundle", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--noise", default=None, help="comma list of sigmas, e.g. pi/24,pi/6")
    e.add_argument("--denoise", default="auto", help="comma list of auto,on,off")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="eval.csv")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        apply_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (TomoforgeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit code 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
