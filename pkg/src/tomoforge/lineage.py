"""Training lineage: which data trains which model, and in what order.

A :class:`Workspace` is a directory holding generated datasets and trained
artifacts. Every step loads its inputs from the workspace (building them on
demand) and saves its output there, so the CLI can run one role at a time
and later steps reuse earlier results.

Order: autoencoders on noiseless pure data; clones retrained on mixed data
(Conv1D and Conv2D) and on pure+mixed (Conv1D); noise and purity
classifiers on the pure+mixed Conv1D encoder; denoiser from a clone of the
same autoencoder; four regressors on the pure/mixed encoders; boosted trees;
imputer; validation predictions; meta-models.
"""
from __future__ import annotations

import functools
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datagen
from .datagen import Dataset, GenConfig
from .errors import ConfigError
from .gbdt import BoostParams, MultiBooster, fit_multi
from .impute import ImputerModel, fit_imputer
from .nn import roles
from .nn.network import Network
from .nn.train import Phase, TrainConfig, train
from .pipeline import BranchStack, PipelineBundle
from .stack import MetaModel, fit_meta, stack_predictions

KINDS = ("pure", "mixed")
ROLES = ("ae", "denoise", "isnoise", "ispure", "reg-conv1d", "reg-conv2d", "reg-gbdt", "imputer",
         "meta")


def _phases(*items):
    return [Phase(*p) for p in items]


@dataclass
class LineageConfig:
    """Sizes, schedules and thresholds for one full training run.

    The desk preset lengthens the short full-scale schedules and relies on
    the early-stop thresholds to end training, since fewer samples per
    epoch need more epochs to reach the same loss.
    """

    gen: GenConfig = field(default_factory=GenConfig)
    latent: int = roles.DESK_LATENT
    ae_threshold: float = 4e-4
    denoise_threshold: float = 3e-3
    reg_threshold: float = 4e-4
    ae_schedule: list = field(default_factory=lambda: _phases(
        ("adam", 3e-3, 5), ("adam", 1e-3, 30), ("sgd", 1e-3, 1)))
    ae_retrain_schedule: list = field(default_factory=lambda: _phases(
        ("adam", 1e-3, 25), ("sgd", 1e-3, 1)))
    clf_schedule: list = field(default_factory=lambda: _phases(("adam", 1e-3, 2)))
    denoise_schedule: list = field(default_factory=lambda: _phases(
        ("adam", 1e-3, 5), ("sgd", 1e-3, 2)))
    reg_schedule: list = field(default_factory=lambda: _phases(
        ("adam", 1e-3, 250), ("adam", 3e-4, 80), ("sgd", 1e-3, 2)))
    batch_size: int = 256
    boost: BoostParams = field(default_factory=BoostParams)
    imputer_rows: int | None = None  # per kind; None uses every training row
    seed: int = 0
    preset: str = "desk"

    def __post_init__(self):
        for name in ("ae_schedule", "ae_retrain_schedule", "clf_schedule", "denoise_schedule",
                     "reg_schedule"):
            setattr(self, name, [p if isinstance(p, Phase) else Phase(**p) if isinstance(p, dict)
                                 else Phase(*p) for p in getattr(self, name)])
        if self.latent < 1:
            raise ConfigError("latent must be >= 1")

    @classmethod
    def paper(cls, **kw) -> "LineageConfig":
        """Full-scale sizes, epochs and thresholds (the ``--paper-scale`` preset)."""
        base = dict(gen=GenConfig.paper(), latent=roles.PAPER_LATENT, denoise_threshold=1e-3,
                    ae_schedule=_phases(("adam", 3e-3, 1), ("adam", 1e-3, 2), ("sgd", 1e-3, 1)),
                    ae_retrain_schedule=_phases(("adam", 1e-3, 1), ("sgd", 1e-3, 1)),
                    clf_schedule=_phases(("adam", 1e-3, 1)),
                    denoise_schedule=_phases(("adam", 1e-3, 5), ("sgd", 1e-3, 2)),
                    reg_schedule=_phases(("adam", 1e-3, 3), ("sgd", 1e-3, 2)), preset="paper")
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen"] = self.gen.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _timed(artifact):
    """Record the wall time of a training step in ``models/timings.json``.

    ``artifact`` maps the step's arguments to the artifact name.
    """
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(self, *args, **kw):
            t0 = time.perf_counter()
            out = fn(self, *args, **kw)
            self.record_timing(artifact(*args), time.perf_counter() - t0)
            return out
        return wrapper
    return deco


def _tc(cfg: LineageConfig, schedule, early_stop=None, loss="mse", seed_key=0) -> TrainConfig:
    return TrainConfig(schedule=schedule, batch_size=cfg.batch_size, early_stop=early_stop,
                       loss=loss, seed=cfg.seed * 1000 + seed_key)


class Workspace:
    """Directory of datasets (``data/``) and artifacts (``models/``)."""

    def __init__(self, root, cfg: LineageConfig | None = None, log=None):
        self.root = Path(root)
        self.cfg = cfg or LineageConfig()
        self.log = log or (lambda msg: None)
        self.data_dir = self.root / "data"
        self.model_dir = self.root / "models"
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.model_dir.mkdir(parents=True, exist_ok=True)
        self._cache: dict = {}
        cfg_path = self.root / "lineage.json"
        if not cfg_path.exists():
            cfg_path.write_text(json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True))

    def timings(self) -> dict:
        """Seconds spent on each training step, including any inputs it had to build first."""
        path = self.model_dir / "timings.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def record_timing(self, name: str, seconds: float):
        t = self.timings()
        t[name] = seconds
        (self.model_dir / "timings.json").write_text(json.dumps(t, indent=1, sort_keys=True))

    # ------------------------------------------------------------ datasets
    def dataset(self, name: str) -> Dataset:
        """``noiseless_<kind>``, ``allnoise_<kind>`` or ``nonoise_<kind>``."""
        if name in self._cache:
            return self._cache[name]
        path = self.data_dir / f"{name}.tmf"
        if not path.exists():
            self._generate(name)
        ds = datagen.load(path)
        self._cache[name] = ds
        return ds

    def _generate(self, name):
        g = self.cfg.gen
        prefix, kind = name.rsplit("_", 1)
        if kind not in KINDS:
            raise ConfigError(f"unknown dataset {name!r}")
        if prefix == "noiseless":
            n = g.n_pure if kind == "pure" else g.n_mixed
            self.log(f"generating {n} noiseless {kind} states")
            ds = datagen.gen_noiseless(kind, n, seed=datagen.derive_rng(g.master_seed, 1,
                                                                        datagen.KIND_CODE[kind]),
                                       split_ratios=g.split_ratios)
            datagen.save(ds, self.data_dir / f"{name}.tmf")
        elif prefix in ("allnoise", "nonoise"):
            self.log(f"generating noisy {kind} set: {g.noisy_states_per_sigma} states x "
                     f"{len(g.sigma_list)} sigmas x {g.rotations_per_state} rotations")
            alln, non = datagen.gen_noisy_all(kind, g)
            datagen.save(alln, self.data_dir / f"allnoise_{kind}.tmf")
            datagen.save(non, self.data_dir / f"nonoise_{kind}.tmf")
        else:
            raise ConfigError(f"unknown dataset {name!r}")

    # ------------------------------------------------------------ models
    def path(self, name: str) -> Path:
        ext = ".json" if name.startswith(("gbdt_", "meta_", "imputer")) else ".tfnn"
        if name.startswith("valpred_"):
            ext = ".npz"
        return self.model_dir / f"{name}{ext}"

    def has(self, name: str) -> bool:
        return self.path(name).exists()

    def net(self, name: str) -> Network:
        if name not in self._cache:
            if not self.has(name):
                self.build(name)
            self._cache[name] = Network.load(self.path(name))
        return self._cache[name]

    def _save_net(self, name, net: Network, hist=None):
        net.as_float32()
        if hist is not None:
            net.meta["history"] = hist.to_dict()
        net.save(self.path(name))
        self._cache[name] = Network.load(self.path(name))
        self.log(f"saved {name}")

    def build(self, name: str):
        """Train the artifact called ``name`` (and, recursively, its inputs)."""
        if name.startswith(("ae1d_", "ae2d_")):
            self.train_ae(name)
        elif name in ("isnoise", "ispure"):
            self.train_classifier(name)
        elif name == "denoise":
            self.train_denoiser()
        elif name.startswith(("reg1d_", "reg2d_")):
            self.train_regressor(name)
        elif name.startswith("gbdt_"):
            self.train_gbdt(name.split("_")[1])
        elif name == "imputer":
            self.train_imputer()
        elif name.startswith("meta_"):
            self.train_meta(name.split("_")[1])
        else:
            raise ConfigError(f"unknown artifact {name!r}")

    # ------------------------------------------------------------ splits
    def _xy(self, ds: Dataset, split: str, target="Y"):
        sel = ds.split == split
        return ds.X[sel], getattr(ds, target)[sel]

    @_timed(lambda name: name)
    def train_ae(self, name: str):
        cfg = self.cfg
        dim, kind = name[2:4], name.split("_")[1]
        stop = ("val_loss", cfg.ae_threshold)
        if kind == "pure":
            ds = self.dataset("noiseless_pure")
            build = roles.build_ae_1d if dim == "1d" else roles.build_ae_2d
            net = build(latent=cfg.latent, seed=cfg.seed + (1 if dim == "1d" else 2))
            schedule = cfg.ae_schedule
        elif kind == "mixed":
            ds = self.dataset("noiseless_mixed")
            net = self.net(f"ae{dim}_pure").clone()
            schedule = cfg.ae_retrain_schedule
        elif kind == "both" and dim == "1d":
            ds = Dataset.concat([self.dataset("noiseless_pure"), self.dataset("noiseless_mixed")])
            net = self.net("ae1d_pure").clone()
            schedule = cfg.ae_retrain_schedule
        else:
            raise ConfigError(f"unknown autoencoder {name!r}")
        Xt, _ = self._xy(ds, "train", "X")
        Xv, _ = self._xy(ds, "val", "X")
        self.log(f"training {name} on {len(Xt)} rows")
        hist = train(net, Xt, Xt, Xv, Xv, _tc(cfg, schedule, stop, seed_key=hash_key(name)),
                     log=self.log)
        net.meta.update(role=name)
        self._save_net(name, net, hist)

    def classifier_sets(self):
        if "clf_sets" not in self._cache:
            self._cache["clf_sets"] = datagen.build_classifier_sets(
                self.dataset("noiseless_pure"), self.dataset("noiseless_mixed"),
                self.dataset("allnoise_pure"), self.dataset("allnoise_mixed"))
        return self._cache["clf_sets"]

    @_timed(lambda name: name)
    def train_classifier(self, name: str):
        cfg = self.cfg
        ispure, isnoise = self.classifier_sets()
        ds = ispure if name == "ispure" else isnoise
        enc = roles.transfer_encoder(self.net("ae1d_both"))
        net = roles.build_classifier(enc, seed=cfg.seed + 7)  # both classifiers share the init
        Xt, yt = self._xy(ds, "train", "labels")
        Xv, yv = self._xy(ds, "val", "labels")
        self.log(f"training {name} on {len(Xt)} rows")
        hist = train(net, Xt, yt.astype(float), Xv, yv.astype(float),
                     _tc(cfg, cfg.clf_schedule, None, "binary_cross_entropy", hash_key(name)),
                     log=self.log)
        net.meta.update(role=name)
        self._save_net(name, net, hist)

    def noisy_pairs(self, split: str):
        """Stacked (noisy, clean, tau) rows of both kinds for one split."""
        parts = [(self.dataset(f"allnoise_{k}"), self.dataset(f"nonoise_{k}")) for k in KINDS]
        X = np.concatenate([a.X[a.split == split] for a, _ in parts])
        C = np.concatenate([c.X[c.split == split] for _, c in parts])
        return X, C

    @_timed(lambda: "denoise")
    def train_denoiser(self):
        cfg = self.cfg
        net = roles.build_denoiser(self.net("ae1d_both"))
        Xt, Ct = self.noisy_pairs("train")
        Xv, Cv = self.noisy_pairs("val")
        self.log(f"training denoise on {len(Xt)} rows")
        hist = train(net, Xt, Ct, Xv, Cv,
                     _tc(cfg, cfg.denoise_schedule, ("train_val_loss", cfg.denoise_threshold),
                         seed_key=hash_key("denoise")), log=self.log)
        self._save_net("denoise", net, hist)

    @_timed(lambda name: name)
    def train_regressor(self, name: str):
        cfg = self.cfg
        dim, kind = name[3:5], name.split("_")[1]
        enc = roles.transfer_encoder(self.net(f"ae{dim}_{kind}"))
        net = roles.build_regressor(enc, seed=cfg.seed + hash_key(name) % 1000)
        ds = self.dataset(f"noiseless_{kind}")
        Xt, Yt = self._xy(ds, "train")
        Xv, Yv = self._xy(ds, "val")
        self.log(f"training {name} on {len(Xt)} rows")
        hist = train(net, Xt, Yt, Xv, Yv,
                     _tc(cfg, cfg.reg_schedule, ("val_loss", cfg.reg_threshold), seed_key=hash_key(name)),
                     log=self.log)
        net.meta.update(role=name)
        self._save_net(name, net, hist)

    def gbdt(self, kind: str) -> MultiBooster:
        key = f"gbdt_{kind}"
        if key not in self._cache:
            if not self.has(key):
                self.train_gbdt(kind)
            self._cache[key] = MultiBooster.load(self.path(key))
        return self._cache[key]

    @_timed(lambda kind: f"gbdt_{kind}")
    def train_gbdt(self, kind: str):
        ds = self.dataset(f"noiseless_{kind}")
        Xt, Yt = self._xy(ds, "train")
        Xv, Yv = self._xy(ds, "val")
        self.log(f"boosting 16 targets for {kind} on {len(Xt)} rows")
        params = replace(self.cfg.boost, seed=self.cfg.seed)
        model = fit_multi(Xt, Yt, params, val=(Xv, Yv), log=self.log)
        model.save(self.path(f"gbdt_{kind}"))
        self._cache[f"gbdt_{kind}"] = model

    def imputer(self) -> ImputerModel:
        if "imputer" not in self._cache:
            if not self.has("imputer"):
                self.train_imputer()
            self._cache["imputer"] = ImputerModel.load(self.path("imputer"))
        return self._cache["imputer"]

    @_timed(lambda: "imputer")
    def train_imputer(self):
        rows = []
        for k in KINDS:
            X, _ = self._xy(self.dataset(f"noiseless_{k}"), "train", "X")
            if self.cfg.imputer_rows is not None:
                X = X[:self.cfg.imputer_rows]
            rows.append(X)
        X = np.concatenate(rows)
        self.log(f"fitting imputer on {len(X)} rows")
        imp = fit_imputer(X)
        imp.save(self.path("imputer"))
        self._cache["imputer"] = imp

    # ------------------------------------------------------------ stacking
    def meta_inputs(self, kind: str):
        """Held-out rows used to fit the meta-model for ``kind``.

        Noiseless validation rows plus noisy validation rows passed through
        the denoiser, i.e. what the regressors see inside the pipeline.
        """
        clean = self.dataset(f"noiseless_{kind}")
        noisy = self.dataset(f"allnoise_{kind}")
        Xc, Yc = self._xy(clean, "val")
        Xn, Yn = self._xy(noisy, "val")
        Xn = roles.denoise(self.net("denoise"), Xn)
        split = np.array(["val"] * (len(Xc) + len(Xn)))
        return np.concatenate([Xc, Xn]), np.concatenate([Yc, Yn]), split

    def write_valpreds(self, kind: str, model: str):
        """Predictions of one base model on the meta-fit rows."""
        X, Y, split = self.meta_inputs(kind)
        if model == "gbdt":
            P = self.gbdt(kind).predict(X)
        else:
            P = roles.regress_tau(self.net(f"reg{model[4:]}_{kind}"), X)
        np.savez(self.path(f"valpred_{model}_{kind}"), pred=P, Y=Y, split=split)

    def valpreds_present(self, kind: str) -> bool:
        return all(self.has(f"valpred_{m}_{kind}") for m in ("conv1d", "conv2d", "gbdt"))

    @_timed(lambda kind, *a: f"meta_{kind}")
    def train_meta(self, kind: str, per_element=False, intercept=False, require_valpreds=False):
        if not self.valpreds_present(kind):
            if require_valpreds:
                raise FileNotFoundError(f"validation predictions for {kind} are missing; "
                                        "train the three regressors first")
            for m in ("conv1d", "conv2d", "gbdt"):
                if not self.has(f"valpred_{m}_{kind}"):
                    self.write_valpreds(kind, m)
        loaded = [np.load(self.path(f"valpred_{m}_{kind}")) for m in ("conv1d", "conv2d", "gbdt")]
        preds = stack_predictions(*(d["pred"] for d in loaded))
        meta = fit_meta(preds, loaded[0]["Y"], split=loaded[0]["split"], per_element=per_element,
                        intercept=intercept)
        meta.save(self.path(f"meta_{kind}"))
        self._cache[f"meta_{kind}"] = meta
        self.log(f"meta {kind}: weights {np.round(meta.weights, 4).tolist()}")
        return meta

    def meta(self, kind: str) -> MetaModel:
        if f"meta_{kind}" not in self._cache:
            if not self.has(f"meta_{kind}"):
                self.train_meta(kind)
            self._cache[f"meta_{kind}"] = MetaModel.load(self.path(f"meta_{kind}"))
        return self._cache[f"meta_{kind}"]

    # ------------------------------------------------------------ bundle
    def run_role(self, role: str, kind: str | None = None, **kw):
        """Train one CLI role; ``kind`` selects pure/mixed/both where relevant."""
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}")
        kinds = [kind] if kind else list(KINDS)
        if role == "ae":
            names = {"pure": ["ae1d_pure", "ae2d_pure"], "mixed": ["ae1d_mixed", "ae2d_mixed"],
                     "both": ["ae1d_both"]}
            for k in ([kind] if kind else ["pure", "mixed", "both"]):
                for n in names[k]:
                    self.train_ae(n)
        elif role in ("isnoise", "ispure"):
            self.train_classifier(role)
        elif role == "denoise":
            self.train_denoiser()
        elif role in ("reg-conv1d", "reg-conv2d"):
            dim = role[-2:]
            for k in kinds:
                self.train_regressor(f"reg{dim}_{k}")
                self.write_valpreds(k, f"conv{dim}")
        elif role == "reg-gbdt":
            for k in kinds:
                self.train_gbdt(k)
                self.write_valpreds(k, "gbdt")
        elif role == "imputer":
            self.train_imputer()
        elif role == "meta":
            for k in kinds:
                self.train_meta(k, require_valpreds=True, **kw)

    def bundle(self) -> PipelineBundle:
        stacks = {k: BranchStack(self.net(f"reg1d_{k}"), self.net(f"reg2d_{k}"), self.gbdt(k),
                                 self.meta(k)) for k in KINDS}
        return PipelineBundle(self.imputer(), self.net("isnoise"), self.net("denoise"),
                              self.net("ispure"), stacks,
                              {"noise_threshold": 0.5, "pure_threshold": 0.5,
                               "preset": self.cfg.preset, "lineage_digest": self.cfg.digest(),
                               "deviations": deviations(self.cfg)})

    def build_all(self) -> PipelineBundle:
        for name in ("ae1d_pure", "ae2d_pure", "ae1d_mixed", "ae2d_mixed", "ae1d_both", "isnoise",
                     "ispure", "denoise", "reg1d_pure", "reg2d_pure", "reg1d_mixed", "reg2d_mixed"):
            if not self.has(name):
                self.build(name)
        for k in KINDS:
            self.gbdt(k)
        self.imputer()
        for k in KINDS:
            self.meta(k)
        return self.bundle()


def hash_key(name: str) -> int:
    """Small stable integer derived from an artifact name (per-role seeds)."""
    return int(hashlib.sha256(name.encode()).hexdigest()[:6], 16)


def deviations(cfg: LineageConfig) -> list[str]:
    """Human-readable differences between ``cfg`` and the full-scale preset."""
    ref = LineageConfig.paper()
    g, rg = cfg.gen, ref.gen
    out = []
    if (g.n_pure, g.n_mixed) != (rg.n_pure, rg.n_mixed):
        out.append(f"{g.n_pure} pure and {g.n_mixed} mixed noiseless states instead of "
                   f"{rg.n_pure} each")
    if g.noisy_states_per_sigma != rg.noisy_states_per_sigma:
        out.append(f"{g.noisy_states_per_sigma} noisy source states per sigma instead of "
                   f"{rg.noisy_states_per_sigma}")
    if g.rotations_per_state != rg.rotations_per_state:
        out.append(f"{g.rotations_per_state} rotations per state instead of {rg.rotations_per_state}")
    if cfg.latent != ref.latent:
        out.append(f"latent size {cfg.latent} instead of {ref.latent}")
    names = ("ae_schedule", "ae_retrain_schedule", "clf_schedule", "denoise_schedule", "reg_schedule")
    changed = [n for n in names if getattr(cfg, n) != getattr(ref, n)]
    if changed:
        out.append("different optimizer schedules for " + ", ".join(changed))
    if cfg.denoise_threshold != ref.denoise_threshold:
        out.append(f"denoiser stops at train and val MSE {cfg.denoise_threshold:g} instead of "
                   f"{ref.denoise_threshold:g}")
    return out
