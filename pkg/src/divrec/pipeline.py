"""End-to-end runs: configuration, on-disk stages and the loss and sampling grid.

A run directory (``out_dir``) holds the data-side artifacts shared by every
model variant::

    events.csv              synthetic log (synth preset only)
    catalog.txt             item strings in index order
    embed_sequences.jsonl   per-user view sequences used for item embeddings
    train.jsonl, eval.jsonl training examples (split manifests)
    embeddings.txt/.bin     item embedding table
    index.bin               nearest-neighbour index

and each model variant writes to ``out_dir/<run_name>`` (or ``out_dir``
itself when ``run_name`` is empty)::

    checkpoint.bin, loss_log.tsv, report.txt, rank_frequency.tsv

``manifest.json`` in each directory lists the files with their SHA-256.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ann, contrastive, embeddings, ingest, metrics, session_model, synth
from .contrastive import LossSpec, SamplingSpec
from .embeddings import EmbeddingTable, SgConfig
from .errors import ConfigError, UnknownItems
from .ingest import SplitSpec
from .session_model import TrainConfig
from .synth import SynthConfig

log = logging.getLogger(__name__)

PRESET_NAMES = ("synth", "retailrocket", "generic-csv")


@dataclass(frozen=True)
class AnnConfig:
    n_trees: int = 16
    leaf_size: int = 32
    search_budget: int | None = None


@dataclass
class RunConfig:
    preset: str = "synth"
    events_path: Path | None = None
    out_dir: Path = Path("runs/default")
    run_name: str = ""
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    max_len: int = ingest.MAX_SEQ_LEN
    sg: SgConfig = field(default_factory=SgConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    ann: AnnConfig = field(default_factory=AnnConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    top_n: int = metrics.K
    exclude_inputs: bool = True

    @property
    def data_dir(self) -> Path:
        return Path(self.out_dir)

    @property
    def model_dir(self) -> Path:
        return self.data_dir / self.run_name if self.run_name else self.data_dir

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every component seed set to ``seed``."""
        return dataclasses.replace(
            self, seed=seed,
            sg=dataclasses.replace(self.sg, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed),
        )

    def validate(self) -> None:
        if self.preset not in PRESET_NAMES:
            raise ConfigError(f"run.preset must be one of {PRESET_NAMES}, got {self.preset!r}")
        if self.preset != "synth" and self.events_path is None:
            raise ConfigError(f"preset {self.preset!r} needs paths.events")
        if self.events_path is not None and not Path(self.events_path).exists():
            raise ConfigError(f"events file not found: {self.events_path}")
        if not 1 <= self.max_len <= ingest.MAX_SEQ_LEN:
            raise ConfigError(f"ingest.max_len must lie in [1, {ingest.MAX_SEQ_LEN}]")
        if self.top_n < 1 or self.top_n > metrics.K:
            raise ConfigError(f"recommend.top_n must lie in [1, {metrics.K}]")
        contrastive.check_compatible(self.loss, self.sampling)
        session_model.check_config(self.train, self.sampling)
        self.synth.validate()

    def echo(self) -> dict:
        """Flat, path-free view of the settings that determine results."""
        return {k: v for k, v in flatten(self).items()
                if not k.startswith("paths.") and k not in ("run.out_dir",)}


# --------------------------------------------------------------------------
# INI round trip.  Sections mirror the modules; keys mirror dataclass fields.

_SECTIONS = {
    "ingest": ("split", SplitSpec),
    "item_embeddings": ("sg", SgConfig),
    "session_model": ("train", TrainConfig),
    "loss": ("loss", LossSpec),
    "sampling": ("sampling", SamplingSpec),
    "ann_index": ("ann", AnnConfig),
    "synth": ("synth", SynthConfig),
}


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_like(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(","))
        if default is None:
            return int(raw) if raw else None
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def flatten(cfg: RunConfig) -> dict:
    out = {
        "run.preset": cfg.preset,
        "run.out_dir": str(cfg.out_dir),
        "run.run_name": cfg.run_name,
        "run.seed": cfg.seed,
        "paths.events": "" if cfg.events_path is None else str(cfg.events_path),
        "ingest.max_len": cfg.max_len,
        "recommend.top_n": cfg.top_n,
        "recommend.exclude_inputs": cfg.exclude_inputs,
    }
    for section, (attr, _) in _SECTIONS.items():
        for f in dataclasses.fields(getattr(cfg, attr)):
            out[f"{section}.{f.name}"] = getattr(getattr(cfg, attr), f.name)
    return {k: v if isinstance(v, (int, float, str)) and not isinstance(v, bool) else _fmt(v)
            for k, v in out.items()}


def to_ini(cfg: RunConfig) -> str:
    sections: dict = {}
    for key, val in flatten(cfg).items():
        sec, name = key.split(".", 1)
        sections.setdefault(sec, {})[name] = _fmt(val)
    lines = []
    for sec, kv in sections.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in kv.items()]
        lines.append("")
    return "\n".join(lines)


def from_ini(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    cfg = RunConfig()
    known = {"run", "paths", "recommend", *(_SECTIONS)}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() or base_dir is None else base_dir / path

    updates: dict = {}
    if cp.has_section("run"):
        r = cp["run"]
        for key in r:
            if key not in ("preset", "out_dir", "run_name", "seed"):
                raise ConfigError(f"unknown key run.{key}")
        updates["preset"] = r.get("preset", cfg.preset)
        if "out_dir" in r:
            updates["out_dir"] = resolve(r["out_dir"])
        updates["run_name"] = r.get("run_name", cfg.run_name)
        if "seed" in r:
            updates["seed"] = _parse_like(r["seed"], 0, "run.seed")
    if cp.has_section("paths") and cp["paths"].get("events", "").strip():
        updates["events_path"] = resolve(cp["paths"]["events"].strip())
    if cp.has_section("recommend"):
        rec = cp["recommend"]
        if "top_n" in rec:
            updates["top_n"] = _parse_like(rec["top_n"], 0, "recommend.top_n")
        if "exclude_inputs" in rec:
            updates["exclude_inputs"] = _parse_like(rec["exclude_inputs"], True, "recommend.exclude_inputs")
    for section, (attr, klass) in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        current = getattr(cfg, attr)
        names = {f.name for f in dataclasses.fields(klass)}
        vals = {}
        for key, raw in cp[section].items():
            if section == "ingest" and key == "max_len":
                updates["max_len"] = _parse_like(raw, 0, "ingest.max_len")
                continue
            if key not in names:
                raise ConfigError(f"unknown key {section}.{key}")
            vals[key] = _parse_like(raw, getattr(current, key), f"{section}.{key}")
        try:
            updates[attr] = dataclasses.replace(current, **vals)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    cfg = dataclasses.replace(cfg, **updates)
    # component seeds follow the run seed unless a section pins its own
    seeded = cfg.with_seed(cfg.seed)
    for section, attr in (("item_embeddings", "sg"), ("session_model", "train"), ("synth", "synth")):
        if cp.has_section(section) and "seed" in cp[section]:
            seeded = dataclasses.replace(seeded, **{attr: getattr(cfg, attr)})
    return seeded


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return from_ini(path.read_text(encoding="utf-8"), base_dir=path.parent)


# --------------------------------------------------------------------------
# manifests


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def update_manifest(directory: Path, names, extra: dict | None = None) -> None:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {"artifacts": {}}
    for name in names:
        manifest["artifacts"][name] = _sha256(directory / name)
    if extra:
        manifest.setdefault("stages", {}).update(extra)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found at {path}; run the earlier stage first")
    return path


# --------------------------------------------------------------------------
# stages


def stage_synth(cfg: RunConfig) -> Path:
    cfg.synth.validate()
    out = cfg.data_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / "events.csv"
    ingest.write_events_csv(path, synth.generate(cfg.synth))
    update_manifest(out, ["events.csv"], {"synth": _section(cfg, "synth")})
    return path


def _section(cfg: RunConfig, prefix: str) -> dict:
    return {k: v for k, v in flatten(cfg).items() if k.startswith(prefix + ".")}


def events_path(cfg: RunConfig) -> Path:
    if cfg.events_path is not None:
        return Path(cfg.events_path)
    return cfg.data_dir / "events.csv"


@dataclass
class Dataset:
    catalog: ingest.Catalog
    embed_sequences: list
    train: list
    eval: list
    stats: dict


def prepare_dataset(events, split: SplitSpec = SplitSpec(), min_count: int = 1,
                    max_len: int = ingest.MAX_SEQ_LEN, seed: int = 0) -> Dataset:
    """Chronological split, catalog from the embedding part, examples from the
    model part, then the per-user train/eval split."""
    embed, model = ingest.chronological_split(events, split)
    seqs = ingest.view_sequences(embed)
    catalog = ingest.build_catalog(seqs, min_count)
    embed_seqs = [[catalog.id_map[s] for s in q if s in catalog.id_map] for q in seqs]
    embed_seqs = [q for q in embed_seqs if q]
    examples = ingest.build_examples(model, catalog, max_len)
    train, evl = ingest.split_by_user(examples, split.train_fraction, seed)
    stats = {
        "n_events": len(events), "n_embed_events": len(embed), "n_model_events": len(model),
        "n_items": len(catalog), "n_examples": len(examples),
        "n_train": len(train), "n_eval": len(evl),
    }
    return Dataset(catalog, embed_seqs, train, evl, stats)


def stage_ingest(cfg: RunConfig) -> Dataset:
    cfg.validate()
    src = events_path(cfg)
    if not src.exists():
        if cfg.preset == "synth":
            src = stage_synth(cfg)
        else:
            raise ConfigError(f"events file not found: {src}")
    parsed = ingest.read_events(src, preset=cfg.preset)
    ds = prepare_dataset(parsed.records, cfg.split, cfg.sg.min_count, cfg.max_len, cfg.seed)
    ds.stats.update(n_malformed=parsed.n_malformed, n_ignored=parsed.n_ignored)
    out = cfg.data_dir
    out.mkdir(parents=True, exist_ok=True)
    ds.catalog.save(out / "catalog.txt")
    with open(out / "embed_sequences.jsonl", "w", encoding="utf-8") as fh:
        for q in ds.embed_sequences:
            fh.write(json.dumps(q, separators=(",", ":")) + "\n")
    ingest.write_examples(out / "train.jsonl", ds.train)
    ingest.write_examples(out / "eval.jsonl", ds.eval)
    update_manifest(out, ["catalog.txt", "embed_sequences.jsonl", "train.jsonl", "eval.jsonl"],
                    {"ingest": ds.stats})
    return ds


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data_dir
    catalog = ingest.Catalog.load(_require(d / "catalog.txt", "catalog"))
    with open(_require(d / "embed_sequences.jsonl", "embedding sequences"), encoding="utf-8") as fh:
        seqs = [json.loads(line) for line in fh if line.strip()]
    train = ingest.read_examples(_require(d / "train.jsonl", "train manifest"))
    evl = ingest.read_examples(_require(d / "eval.jsonl", "eval manifest"))
    return Dataset(catalog, seqs, train, evl, {})


def stage_train_embeddings(cfg: RunConfig) -> EmbeddingTable:
    ds = load_dataset(cfg)
    table = embeddings.train_skipgram(ds.embed_sequences, cfg.sg, catalog=ds.catalog)
    table.save_text(cfg.data_dir / "embeddings.txt")
    table.save_binary(cfg.data_dir / "embeddings.bin")
    forest = ann.build(table, cfg.ann.n_trees, cfg.ann.leaf_size, cfg.seed)
    forest.save(cfg.data_dir / "index.bin")
    update_manifest(cfg.data_dir, ["embeddings.txt", "embeddings.bin", "index.bin"],
                    {"item_embeddings": _section(cfg, "item_embeddings")})
    return table


def load_table(cfg: RunConfig) -> EmbeddingTable:
    return EmbeddingTable.load_binary(_require(cfg.data_dir / "embeddings.bin", "embedding table"))


def load_index(cfg: RunConfig, table: EmbeddingTable | None = None) -> ann.RpForest:
    path = cfg.data_dir / "index.bin"
    if path.exists():
        return ann.RpForest.load(path)
    table = table or load_table(cfg)
    return ann.build(table, cfg.ann.n_trees, cfg.ann.leaf_size, cfg.seed)


def stage_train_model(cfg: RunConfig) -> session_model.TrainResult:
    cfg.validate()
    ds = load_dataset(cfg)
    table = load_table(cfg)
    result = session_model.fit(table, ds.train, cfg.loss, cfg.sampling, cfg.train)
    out = cfg.model_dir
    out.mkdir(parents=True, exist_ok=True)
    session_model.save_checkpoint(out / "checkpoint.bin", result.params, cfg.echo())
    with open(out / "loss_log.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tmean_loss\n")
        for e, v in enumerate(result.epoch_losses):
            fh.write(f"{e}\t{v!r}\n")
    update_manifest(out, ["checkpoint.bin", "loss_log.tsv"])
    return result


def recommend_lists(params, table, forest, seqs, top_n: int = metrics.K,
                    search_budget: int | None = None, exclude_inputs: bool = True) -> list:
    Z = session_model.predict_batch(params, table, seqs)
    out = []
    for z, seq in zip(Z, seqs):
        res = ann.query(forest, z, top_n, search_budget, exclude=set(seq) if exclude_inputs else None)
        out.append(res.items.tolist())
    return out


def evaluate_model(params, table, forest, examples, cfg: RunConfig | None = None) -> metrics.EvalReport:
    cfg = cfg or RunConfig()
    lists = recommend_lists(params, table, forest, [ex.input_seq for ex in examples],
                            cfg.top_n, cfg.ann.search_budget, cfg.exclude_inputs)
    run = metrics.RecommendationRun(lists, [ex.label for ex in examples], table.n_items)
    return metrics.evaluate_run(run, cfg.echo())


def stage_evaluate(cfg: RunConfig) -> metrics.EvalReport:
    ds = load_dataset(cfg)
    table = load_table(cfg)
    forest = load_index(cfg, table)
    params, _ = session_model.load_checkpoint(_require(cfg.model_dir / "checkpoint.bin", "checkpoint"))
    report = evaluate_model(params, table, forest, ds.eval, cfg)
    out = cfg.model_dir
    report.save(out / "report.txt")
    metrics.write_rank_frequency_tsv(out / "rank_frequency.tsv",
                                     metrics.rank_frequency_report(report.exposure_histogram))
    update_manifest(out, ["report.txt", "rank_frequency.tsv"])
    return report


def recommend(cfg: RunConfig, item_ids) -> list:
    """Top-n ``(item_id, score)`` pairs for a sequence of viewed item ids."""
    table = load_table(cfg)
    catalog = table.catalog
    unknown = [s for s in item_ids if s not in catalog]
    if unknown:
        raise UnknownItems(unknown)
    if not item_ids:
        raise ConfigError("need at least one input item")
    seq = [catalog.index(s) for s in item_ids][-cfg.max_len:]
    forest = load_index(cfg, table)
    params, _ = session_model.load_checkpoint(_require(cfg.model_dir / "checkpoint.bin", "checkpoint"))
    z = session_model.predict(params, table, seq)
    res = ann.query(forest, z, cfg.top_n, cfg.ann.search_budget,
                    exclude=set(seq) if cfg.exclude_inputs else None)
    return [(catalog.item(i), s) for i, s in res]


def run_all(cfg: RunConfig) -> metrics.EvalReport:
    stage_ingest(cfg)
    stage_train_embeddings(cfg)
    stage_train_model(cfg)
    return stage_evaluate(cfg)


# --------------------------------------------------------------------------
# grid

DATA_SECTIONS = ("run.preset", "run.seed", "paths.", "ingest.", "item_embeddings.", "ann_index.", "synth.")


def _data_key(cfg: RunConfig) -> dict:
    return {k: v for k, v in flatten(cfg).items() if k.startswith(DATA_SECTIONS)}


def standard_grid(base: RunConfig) -> list:
    """The seven loss x sampling rows: cosine, then weighted and cross-entropy each with
    100 and 5 in-batch negatives and with top-5 filtering."""
    rows = [
        ("cosine", "cosine", "none", 100),
        ("weighted_inbatch100", "weighted", "in_batch", 100),
        ("weighted_inbatch5", "weighted", "in_batch", 5),
        ("weighted_topk5", "weighted", "top_k", 5),
        ("ce_inbatch100", "cross_entropy", "in_batch", 100),
        ("ce_inbatch5", "cross_entropy", "in_batch", 5),
        ("ce_topk5", "cross_entropy", "top_k", 5),
    ]
    out = []
    for name, kind, strategy, size in rows:
        loss = dataclasses.replace(base.loss, kind=kind)
        if strategy == "top_k":
            sampling = SamplingSpec("top_k", cap=base.sampling.cap, pool_cap=base.sampling.pool_cap, k=size)
        else:
            sampling = SamplingSpec(strategy, cap=size, pool_cap=base.sampling.pool_cap, k=base.sampling.k)
        out.append(dataclasses.replace(base, run_name=name, loss=loss, sampling=sampling))
    return out


def run_grid(configs, out_dir: Path | None = None) -> dict:
    """Run several model configurations over one shared data directory.

    All configurations must agree on data, embedding and index settings; the
    shared stages run once.  Returns ``{run_name: EvalReport}``.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("empty grid")
    if out_dir is not None:
        configs = [dataclasses.replace(c, out_dir=Path(out_dir)) for c in configs]
    names = [c.run_name for c in configs]
    if any(not n for n in names) or len(set(names)) != len(names):
        raise ConfigError("grid runs need distinct, non-empty run names")
    key = _data_key(configs[0])
    for c in configs:
        c.validate()
        if _data_key(c) != key:
            raise ConfigError(f"run {c.run_name!r} differs from the first run in data/embedding settings")
    first = configs[0]
    stage_ingest(first)
    stage_train_embeddings(first)
    reports = {}
    for c in configs:
        stage_train_model(c)
        reports[c.run_name] = stage_evaluate(c)
    summary = first.data_dir / "grid_summary.tsv"
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("run\tloss\tstrategy\tsize\tndcg_at_10\tgini\tcoverage\n")
        for c in configs:
            r = reports[c.run_name]
            size = c.sampling.size
            fh.write(f"{c.run_name}\t{c.loss.kind}\t{c.sampling.strategy}\t{'' if size is None else size}"
                     f"\t{r.ndcg_at_10:.4f}\t{r.gini:.4f}\t{r.coverage:.4f}\n")
    update_manifest(first.data_dir, ["grid_summary.tsv"])
    return reports
