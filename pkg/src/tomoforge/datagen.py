"""Training/validation/test set generation and dataset persistence.

Noiseless sets hold one row per random state. Noisy sets hold
``rotations_per_state`` rows per state, where every row is measured with freshly
drawn basis rotations. Train, validation, and test splits always contain
disjoint states.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import noise, qcore
from .errors import ConfigError, SchemaError

SPLITS = ("train", "val", "test")
M_COLS = [f"m{k:02d}" for k in range(36)]
T_COLS = [f"t{k:02d}" for k in range(16)]
SCHEMA_VERSION = 1
MAGIC = b"TMF1"

KIND_CODE = {"pure": 0, "mixed": 1}


@dataclass
class GenConfig:
    """Dataset sizes and seeds.

    The full-scale preset (``paper()``) is 1M noiseless states per kind and
    3000 noisy source states per sigma; the defaults here are the desk-scale preset.
    """

    n_pure: int = 50_000
    n_mixed: int = 50_000
    noisy_states_per_sigma: int = 300
    rotations_per_state: int = 400
    sigma_list: tuple = (math.pi / 24, math.pi / 12, math.pi / 6)
    split_ratios: tuple = (0.90, 0.05, 0.05)
    # full-scale counts 100/100/50/50/50 cover only 350 of the 400 rotations;
    # the remainder goes to the normal distribution
    distribution_mix: dict = field(default_factory=lambda: {
        "normal": 150, "laplace": 100, "brown": 50, "blue": 50, "pink": 50})
    master_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        r = tuple(float(x) for x in self.split_ratios)
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be three non-negative numbers summing to 1, got {r}")
        unknown = set(self.distribution_mix) - set(noise.DISTRIBUTIONS)
        if unknown:
            raise ConfigError(f"distribution_mix has unknown distributions {sorted(unknown)}")
        if sum(self.distribution_mix.values()) != self.rotations_per_state:
            raise ConfigError(
                f"distribution_mix sums to {sum(self.distribution_mix.values())}, "
                f"but rotations_per_state is {self.rotations_per_state}")
        if min(self.n_pure, self.n_mixed, self.noisy_states_per_sigma) < 0:
            raise ConfigError("dataset sizes must be non-negative")

    @classmethod
    def paper(cls, **kw):
        base = dict(n_pure=1_000_000, n_mixed=1_000_000, noisy_states_per_sigma=3000)
        base.update(kw)
        return cls(**base)

    def scaled_mix(self, rotations: int) -> dict:
        """Distribution counts for a different rotation count, keeping proportions."""
        total = sum(self.distribution_mix.values())
        names = list(self.distribution_mix)
        counts = [self.distribution_mix[d] * rotations // total for d in names]
        for i in range(rotations - sum(counts)):
            counts[i % len(counts)] += 1
        return dict(zip(names, counts))

    def to_dict(self):
        d = asdict(self)
        d["sigma_list"] = list(self.sigma_list)
        d["split_ratios"] = list(self.split_ratios)
        return d


@dataclass
class Dataset:
    """Design matrix plus optional targets, labels, and per-row tags.

    Missing measurements are NaN in ``X``.
    """

    X: np.ndarray | None
    Y: np.ndarray | None = None
    labels: np.ndarray | None = None
    split: np.ndarray | None = None
    state_id: np.ndarray | None = None
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_rows
        if self.split is None:
            self.split = np.full(n, "train")
        if self.state_id is None:
            self.state_id = np.arange(n)
        self.split = np.asarray(self.split).astype("<U5")
        self.state_id = np.asarray(self.state_id, dtype=np.int64)
        for name in ("X", "Y", "labels", "split", "state_id", "sigma"):
            a = getattr(self, name)
            if a is not None and len(a) != n:
                raise ValueError(f"{name} has {len(a)} rows, expected {n}")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")

    @property
    def n_rows(self) -> int:
        for a in (self.X, self.Y, self.labels):
            if a is not None:
                return len(a)
        return 0

    def take(self, idx) -> "Dataset":
        def sl(a):
            return None if a is None else a[idx]
        return Dataset(sl(self.X), sl(self.Y), sl(self.labels), sl(self.split),
                       sl(self.state_id), sl(self.sigma), dict(self.meta))

    def subset(self, split: str) -> "Dataset":
        return self.take(np.flatnonzero(self.split == split))

    @staticmethod
    def concat(parts: list["Dataset"], renumber: bool = True) -> "Dataset":
        parts = [p for p in parts if p is not None and p.n_rows > 0]
        if not parts:
            return Dataset(np.zeros((0, 36)))

        def cat(name):
            arrs = [getattr(p, name) for p in parts]
            if any(a is None for a in arrs):
                return None
            return np.concatenate(arrs)

        ids = []
        offset = 0
        for p in parts:
            sid = p.state_id
            if renumber:
                uniq, inv = np.unique(sid, return_inverse=True)
                sid = inv + offset
                offset += len(uniq)
            ids.append(sid)
        return Dataset(cat("X"), cat("Y"), cat("labels"), cat("split"), np.concatenate(ids),
                       cat("sigma"), {"parts": [p.meta for p in parts]})


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_tags(n: int, ratios) -> np.ndarray:
    a, b, c = split_counts(n, ratios)
    return np.array(["train"] * a + ["val"] * b + ["test"] * c, dtype="<U5")


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for a (master seed, key path) pair."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, keys)]))


def random_states(kind: str, n: int, rng) -> np.ndarray:
    """Draw ``n`` states of ``kind``; redraws any state too singular for the tau map."""
    if kind not in KIND_CODE:
        raise ConfigError(f"kind must be 'pure' or 'mixed', got {kind!r}")
    draw = qcore.random_pure_batch if kind == "pure" else qcore.random_mixed_batch
    rho = draw(n, rng)
    for _ in range(100):
        bad = np.flatnonzero(np.linalg.eigvalsh(rho)[:, 0] < 1e-12)
        if bad.size == 0:
            break
        rho[bad] = draw(bad.size, rng)
    return rho


def gen_noiseless(kind: str, n: int, seed=0, split_ratios=(0.90, 0.05, 0.05)) -> Dataset:
    """``n`` random states of ``kind`` with their ideal measurements and tau targets."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    rho = random_states(kind, n, rng)
    X = qcore.measure(rho)
    Y = qcore.rho_to_tau(rho)
    return Dataset(X, Y, split=split_tags(n, split_ratios), state_id=np.arange(n),
                   sigma=np.zeros(n), meta={"kind": kind, "noisy": False, "seed": _jsonable(seed)})


def _noisy_rows(rho, sigma, mix: dict, rng) -> np.ndarray:
    rows = []
    for dist, count in mix.items():
        if count == 0:
            continue
        spec = noise.NoiseSpec(dist, sigma)
        rows.append(noise.measure_rotated(np.broadcast_to(rho, (count, 4, 4)),
                                          noise.draw_angles(spec, count, rng)))
    return np.concatenate(rows)


def gen_noisy(kind: str, n_states: int, cfg: GenConfig, sigma: float, seed=None,
              rotations: int | None = None) -> tuple[Dataset, Dataset]:
    """Noisy measurements of ``n_states`` fresh states at one noise strength.

    Returns ``(allnoise, nonoise)``: both carry the tau targets in ``Y``;
    ``allnoise.X`` holds the rotated measurements and ``nonoise.X`` repeats
    each state's ideal measurement once per rotation.
    """
    cfg.validate()
    rotations = cfg.rotations_per_state if rotations is None else rotations
    mix = cfg.distribution_mix if rotations == cfg.rotations_per_state else cfg.scaled_mix(rotations)
    if seed is None:
        seed = derive_rng(cfg.master_seed, 2, KIND_CODE[kind], int(round(sigma * 1e6)))
    rng = np.random.default_rng(seed)
    rho = random_states(kind, n_states, rng)
    clean = qcore.measure(rho)
    tau = qcore.rho_to_tau(rho)
    noisy = np.concatenate([_noisy_rows(rho[i], sigma, mix, rng) for i in range(n_states)])
    state_split = split_tags(n_states, cfg.split_ratios)
    rep = np.repeat(np.arange(n_states), rotations)
    common = dict(split=state_split[rep], state_id=rep, sigma=np.full(rep.size, float(sigma)))
    meta = {"kind": kind, "noisy": True, "sigma": float(sigma), "rotations": rotations,
            "distribution_mix": mix}
    allnoise = Dataset(noisy, tau[rep], meta=dict(meta, role="allnoise"), **common)
    nonoise = Dataset(clean[rep], tau[rep], meta=dict(meta, role="nonoise"), **common)
    return allnoise, nonoise


def gen_noisy_all(kind: str, cfg: GenConfig, n_states: int | None = None,
                  rotations: int | None = None) -> tuple[Dataset, Dataset]:
    """Stack :func:`gen_noisy` over every sigma in ``cfg.sigma_list``."""
    n_states = cfg.noisy_states_per_sigma if n_states is None else n_states
    pairs = [gen_noisy(kind, n_states, cfg, s, rotations=rotations) for s in cfg.sigma_list]
    allnoise = Dataset.concat([p[0] for p in pairs])
    nonoise = Dataset.concat([p[1] for p in pairs])
    meta = {"kind": kind, "noisy": True, "sigma_list": list(cfg.sigma_list)}
    allnoise.meta = dict(meta, role="allnoise")
    nonoise.meta = dict(meta, role="nonoise")
    return allnoise, nonoise


def build_classifier_sets(noiseless_pure: Dataset, noiseless_mixed: Dataset,
                          noisy_pure: Dataset | None = None,
                          noisy_mixed: Dataset | None = None) -> tuple[Dataset, Dataset]:
    """Stacked design matrices for the purity and noise classifiers.

    ispure: pure noiseless, pure noisy (label 0), then mixed noiseless, mixed
    noisy (label 1). isnoise: pure and mixed noiseless (label 0), then pure
    and mixed noisy (label 1).
    """
    def labelled(ds, value):
        if ds is None or ds.n_rows == 0:
            return None
        out = ds.take(np.arange(ds.n_rows))
        out.Y = None
        out.labels = np.full(ds.n_rows, value, dtype=np.int64)
        return out

    ispure = Dataset.concat([labelled(noiseless_pure, 0), labelled(noisy_pure, 0),
                             labelled(noiseless_mixed, 1), labelled(noisy_mixed, 1)])
    isnoise = Dataset.concat([labelled(noiseless_pure, 0), labelled(noiseless_mixed, 0),
                              labelled(noisy_pure, 1), labelled(noisy_mixed, 1)])
    ispure.meta["role"] = "ispure"
    isnoise.meta["role"] = "isnoise"
    return ispure, isnoise


# -- persistence -------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, (int, float, str, bool)) or x is None:
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return repr(x)


def _columns(ds: Dataset) -> list[str]:
    cols = ["state_id", "split"]
    if ds.labels is not None:
        cols.append("label")
    if ds.sigma is not None:
        cols.append("sigma")
    if ds.X is not None:
        cols += M_COLS
    if ds.Y is not None:
        cols += T_COLS
    return cols


def _numeric_block(ds: Dataset) -> np.ndarray:
    parts = [ds.state_id[:, None].astype(float),
             np.array([SPLITS.index(s) for s in ds.split], dtype=float)[:, None]]
    if ds.labels is not None:
        parts.append(ds.labels[:, None].astype(float))
    if ds.sigma is not None:
        parts.append(np.asarray(ds.sigma, dtype=float)[:, None])
    if ds.X is not None:
        parts.append(np.asarray(ds.X, dtype=float))
    if ds.Y is not None:
        parts.append(np.asarray(ds.Y, dtype=float))
    return np.hstack(parts) if parts else np.zeros((0, 0))


def _from_block(cols: list[str], block: np.ndarray, meta: dict) -> Dataset:
    idx = {c: i for i, c in enumerate(cols)}
    for required in ("state_id", "split"):
        if required not in idx:
            raise SchemaError(f"missing column {required!r}")
    has_x = all(c in idx for c in M_COLS)
    has_y = all(c in idx for c in T_COLS)
    if not (has_x or has_y):
        raise SchemaError("dataset has neither measurement nor tau columns")
    split_codes = block[:, idx["split"]]
    if np.any(~np.isin(split_codes, [0, 1, 2])):
        raise SchemaError("invalid split code")
    return Dataset(
        X=block[:, [idx[c] for c in M_COLS]] if has_x else None,
        Y=block[:, [idx[c] for c in T_COLS]] if has_y else None,
        labels=block[:, idx["label"]].astype(np.int64) if "label" in idx else None,
        split=np.array(SPLITS, dtype="<U5")[split_codes.astype(int)],
        state_id=block[:, idx["state_id"]].astype(np.int64),
        sigma=block[:, idx["sigma"]] if "sigma" in idx else None,
        meta=meta,
    )


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def save(ds: Dataset, path) -> Path:
    """Write ``ds`` as CSV (``.csv``) or the TMF1 binary container (``.tmf``).

    CSV files get a JSON sidecar ``<path>.json`` with the metadata.
    """
    path = Path(path)
    cols = _columns(ds)
    block = _numeric_block(ds)
    header = {"schema": "tomoforge.dataset", "version": SCHEMA_VERSION, "columns": cols,
              "n_rows": ds.n_rows, "meta": ds.meta}
    if path.suffix == ".tmf":
        hb = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
        return path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        split_col = cols.index("split")
        for row, tag in zip(block, ds.split):
            cells = [_fmt(v) for v in row]
            cells[0] = str(int(row[0]))
            cells[split_col] = str(tag)
            if "label" in cols:
                cells[2] = str(int(row[2]))
            w.writerow(cells)
    with open(str(path) + ".json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    return path


def load(path) -> Dataset:
    """Read a dataset written by :func:`save`; raises SchemaError on bad headers."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _load_binary(path)
    return _load_csv(path)


def _load_binary(path: Path) -> Dataset:
    raw = path.read_bytes()
    if len(raw) < 8:
        raise SchemaError("truncated TMF1 header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode())
        cols = header["columns"]
        n = int(header["n_rows"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise SchemaError(f"corrupted TMF1 header: {exc}") from None
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {header.get('version')!r}")
    body = raw[8 + hlen:]
    if len(body) != n * len(cols) * 8:
        raise SchemaError("TMF1 body size does not match header")
    block = np.frombuffer(body, dtype="<f8").reshape(n, len(cols)).astype(float)
    return _from_block(cols, block, header.get("meta", {}))


def _load_csv(path: Path) -> Dataset:
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        try:
            sidecar = json.loads(side.read_text())
        except ValueError as exc:
            raise SchemaError(f"corrupted metadata sidecar: {exc}") from None
        if sidecar.get("version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {sidecar.get('version')!r}")
        meta = sidecar.get("meta", {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise SchemaError("empty file, no header row") from None
        known = {"state_id", "split", "label", "sigma", *M_COLS, *T_COLS}
        if not cols or any(c not in known for c in cols):
            raise SchemaError(f"unexpected header {cols[:4]}...")
        split_col = cols.index("split") if "split" in cols else None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise SchemaError(f"line {lineno}: expected {len(cols)} cells, got {len(row)}")
            vals = []
            for j, cell in enumerate(row):
                if j == split_col:
                    if cell not in SPLITS:
                        raise SchemaError(f"line {lineno}: unknown split {cell!r}")
                    vals.append(float(SPLITS.index(cell)))
                else:
                    try:
                        vals.append(float(cell) if cell != "" else np.nan)
                    except ValueError:
                        raise SchemaError(f"line {lineno}: non-numeric cell {cell!r}") from None
            rows.append(vals)
    block = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return _from_block(cols, block, meta)


def load_measurements_csv(path) -> np.ndarray:
    """Read bare measurement rows (``m00..m35`` header, empty cell = missing)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            return np.zeros((0, 36))
        try:
            pos = [cols.index(c) for c in M_COLS]
        except ValueError:
            raise SchemaError("measurement CSV must have columns m00..m35") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[p]) if row[p] != "" else np.nan for p in pos])
            except (ValueError, IndexError):
                raise SchemaError(f"line {lineno}: malformed measurement row") from None
    return np.array(rows, dtype=float).reshape(len(rows), 36)

