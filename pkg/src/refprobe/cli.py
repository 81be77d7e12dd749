"""Command-line pipeline: gen-data, train, eval-theories, fit-op, pca, reproduce.

Every stage reads a JSON run configuration (``--config``) and writes into the
output directory. All randomness flows from one master seed through labelled
sub-seeds, so any stage can be re-run on its own with identical results.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import logic, meaning, net, probe, scene
from .errors import RefProbeError

log = logging.getLogger("refprobe")

REFERENCE_THEORIES = {
    "random": (0.50, 0.00, 0.00),
    "literal": (0.74, 0.27, 0.05),
    "human": (0.92, 0.63, 0.35),
}
REFERENCE_OPERATORS = {
    "not": {"random": (0.50, 0.00, 0.00), "literal": (0.50, 0.12, 0.03), "negation": (0.97, 0.81, 0.45)},
    "or": {"random": (0.50, 0.00, 0.00), "literal": (0.58, 0.09, 0.01), "disjunction": (0.92, 0.54, 0.19)},
    "and": {"random": (0.50, 0.00, 0.00), "literal": (0.81, 0.19, 0.01), "conjunction": (0.90, 0.56, 0.37)},
}
OPS = ("not", "and", "or")


class UsageError(RefProbeError):
    pass


def derive_seed(master: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named stage."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    schema: dict = field(default_factory=scene.DEFAULT_SCHEMA.to_dict)
    size_min: int = 1
    size_max: int = scene.MAX_WORLD_SIZE
    form_max_size: int = 4
    negation_prob: float = 0.3
    binary_prob: float = 0.4
    annotators: int = 3
    paraphrase_prob: float = 0.4
    noise_prob: float = 0.15
    n_train: int = 3000
    n_test: int = 273
    hidden_dim: int = 64
    decoder_hidden: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 100
    train_steps: int = 10_000
    heldout_scenes: int = 1000
    sample_k: int = meaning.DEFAULT_SAMPLE_SIZE
    sample_source: str = "generated"
    ridge: float = 1e-6
    fit_limit: int = 20_000
    eval_limit: int = 2_000
    master_seed: int = 0
    out_dir: str = "run"

    def __post_init__(self):
        if self.sample_source not in ("generated", "dataset"):
            raise UsageError("sample_source must be 'generated' or 'dataset'")
        if not 0 <= self.master_seed < 2 ** 64:
            raise UsageError("master_seed must be an unsigned 64-bit integer")
        if min(self.n_train, self.n_test, self.annotators, self.sample_k, self.heldout_scenes) < 1:
            raise UsageError("dataset sizes, annotators, sample_k and heldout_scenes must be positive")
        self.attribute_schema
        self.model_config

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        # out_dir is excluded so that identical runs in different places agree
        body = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def seed(self, label: str) -> int:
        return derive_seed(self.master_seed, label)

    @property
    def attribute_schema(self) -> scene.AttributeSchema:
        try:
            return scene.AttributeSchema.from_dict(self.schema)
        except (AttributeError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid schema: {exc}") from exc

    @property
    def sampler(self) -> logic.FormSampler:
        return logic.FormSampler(self.form_max_size, self.negation_prob, self.binary_prob)

    @property
    def model_config(self) -> net.ModelConfig:
        try:
            return net.ModelConfig(
                feature_dim=scene.AttributeSchema.from_dict(self.schema).feature_dim,
                hidden_dim=self.hidden_dim, decoder_hidden=self.decoder_hidden, seed=self.seed("train"),
                learning_rate=self.learning_rate, batch_size=self.batch_size, train_steps=self.train_steps,
            )
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid model settings: {exc}") from exc

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def path(self, name: str) -> Path:
        return self.out / name

    def meta(self) -> dict:
        return {"config_digest": self.digest(), "master_seed": self.master_seed}


# -- stages ------------------------------------------------------------------------

def generate_dataset(cfg: RunConfig, n: int, label: str) -> list[scene.AnnotatedScene]:
    rng = np.random.default_rng(cfg.seed(label))
    schema = cfg.attribute_schema
    out = []
    for _ in range(n):
        sc, form = scene.generate_scene(rng, schema, cfg.size_min, cfg.size_max, cfg.sampler)
        forms = scene.simulate_annotations(rng, form, schema, cfg.annotators, cfg.paraphrase_prob, cfg.noise_prob)
        out.append(scene.AnnotatedScene(sc, forms))
    return out


def cmd_gen_data(cfg: RunConfig) -> tuple[Path, Path]:
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = []
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        data = generate_dataset(cfg, n, f"data-{split}")
        path = cfg.path(f"{split}.jsonl")
        scene.serialize_dataset(data, path, cfg.attribute_schema)
        print(f"{split}: {len(data)} scenes -> {path}")
        paths.append(path)
    return tuple(paths)


def _scene_source(cfg: RunConfig, label: str) -> net.SceneSource:
    return net.SceneSource(cfg.attribute_schema, cfg.size_min, cfg.size_max, cfg.sampler, cfg.seed(label))


def cmd_train(cfg: RunConfig, checkpoint: Path | None = None) -> tuple[Path, float]:
    cfg.out.mkdir(parents=True, exist_ok=True)
    checkpoint = checkpoint or cfg.path("model.ckpt")
    model_cfg = cfg.model_config
    start = time.perf_counter()
    history: list[float] = []
    params = net.train(model_cfg, _scene_source(cfg, "train-scenes"), history=history, log_every=1000)
    elapsed = time.perf_counter() - start
    net.save_checkpoint(params, model_cfg, checkpoint)
    heldout = _scene_source(cfg, "heldout-scenes").take(cfg.heldout_scenes)
    acc = net.accuracy(params, heldout)
    report = probe.AgreementReport("training", [], meta={
        **cfg.meta(), "train_steps": model_cfg.train_steps, "heldout_scenes": cfg.heldout_scenes,
        "heldout_object_accuracy": f"{acc:.6f}",
        "loss_first_100": f"{np.mean(history[:100]):.6f}" if history else "nan",
        "loss_last_100": f"{np.mean(history[-100:]):.6f}" if history else "nan",
    })
    cfg.path("train_report.txt").write_text(report.to_text(), encoding="utf-8")
    log.info("trained %d steps in %.1fs", model_cfg.train_steps, elapsed)
    print(f"held-out object accuracy: {acc:.4f} -> {checkpoint}")
    return checkpoint, acc


def _load_model(cfg: RunConfig, checkpoint: Path | None):
    checkpoint = Path(checkpoint or cfg.path("model.ckpt"))
    if not checkpoint.exists():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    params, model_cfg = net.load_checkpoint(checkpoint)
    if model_cfg.feature_dim != cfg.attribute_schema.feature_dim:
        raise UsageError("checkpoint feature dimension does not match the configured schema")
    return params


def _load_dataset(cfg: RunConfig, path: Path | None, split: str) -> list[scene.AnnotatedScene]:
    path = Path(path or cfg.path(f"{split}.jsonl"))
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    return scene.ingest_dataset(path, cfg.attribute_schema)


def _sample(cfg: RunConfig, train_data=None) -> meaning.WorldSample:
    if cfg.sample_source == "dataset":
        if train_data is None:
            train_data = _load_dataset(cfg, None, "train")
        return meaning.sample_from_dataset(train_data, cfg.sample_k, cfg.seed("sample"))
    return meaning.make_sample(cfg.seed("sample"), cfg.attribute_schema, cfg.sample_k, cfg.size_min, cfg.size_max)


def cmd_eval_theories(cfg: RunConfig, checkpoint=None, dataset=None) -> probe.AgreementReport:
    params = _load_model(cfg, checkpoint)
    data = _load_dataset(cfg, dataset, "test")
    report = probe.evaluate_theories(params, data, _sample(cfg), cfg.seed("theory"))
    report.meta.update(cfg.meta())
    path = cfg.path("theories.txt")
    path.write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return report


def cmd_fit_op(cfg: RunConfig, op: str, checkpoint=None, dataset=None, train_dataset=None) -> probe.AgreementReport:
    if op not in OPS:
        raise UsageError(f"--op must be one of {OPS}")
    params = _load_model(cfg, checkpoint)
    train_data = _load_dataset(cfg, train_dataset, "train")
    test_data = _load_dataset(cfg, dataset, "test")
    sample = _sample(cfg, train_data)
    schema = cfg.attribute_schema
    start = time.perf_counter()
    fit_aligned = probe.collect_alignments(params, train_data, sample)
    test_aligned = probe.collect_alignments(params, test_data, sample)
    role = probe.OPERATOR_ROLES[op]
    if op == "not":
        items = probe.collect_negation_pairs(fit_aligned, schema, cfg.fit_limit, cfg.seed("fit-not"))
    else:
        items = probe.collect_binary_triples(fit_aligned, schema, op, cfg.fit_limit, cfg.seed(f"fit-{op}"))
    if not items:
        raise RefProbeError(f"no aligned pairs certify a {role} relation in the training split")
    if op == "not":
        operator = probe.fit_unary_operator(items, cfg.ridge, role)
        tests = probe.unary_test_items(test_aligned)
    else:
        operator = probe.fit_binary_operator(items, cfg.ridge, role)
        tests = probe.binary_test_items(test_aligned, schema, op, cfg.eval_limit, cfg.seed(f"eval-{op}"))
    if not tests:
        raise RefProbeError(f"no aligned pairs available to test the {role} operator")
    report = probe.evaluate_operator(params, operator, tests, sample, cfg.seed("theory"))
    report.meta.update(cfg.meta())
    report.meta.update({"aligned_fit": len(fit_aligned), "aligned_test": len(test_aligned)})
    # timings go to the log only, so that reports stay byte-identical across runs
    log.info("fit-op %s: fit and evaluation took %.1fs", op, time.perf_counter() - start)
    operator.save(cfg.path(f"operator_{op}.op"))
    cfg.path(f"operator_{op}.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return report


def cmd_pca(cfg: RunConfig, op: str, checkpoint=None, dataset=None, operator_path=None) -> Path:
    if op not in OPS:
        raise UsageError(f"--op must be one of {OPS}")
    operator_path = Path(operator_path or cfg.path(f"operator_{op}.op"))
    if not operator_path.exists():
        raise UsageError(f"operator file not found: {operator_path} (run fit-op first)")
    operator = probe.LinearOperator.load(operator_path)
    params = _load_model(cfg, checkpoint)
    data = _load_dataset(cfg, dataset, "test")
    aligned = probe.collect_alignments(params, data, _sample(cfg))
    points = probe.operator_points(operator, aligned, cfg.attribute_schema, op, seed=cfg.seed(f"pca-{op}"))
    if not points:
        raise RefProbeError(f"no certified {probe.OPERATOR_ROLES[op]} relations among aligned test messages")
    path = cfg.path(f"pca_{op}.tsv")
    probe.write_points(points, path)
    print(f"{len(points)} points -> {path}")
    return path


def _format_comparison(title: str, report: probe.AgreementReport, reference: dict) -> list[str]:
    lines = [f"[{title}]", "row\tmeasured(objects/worlds/tables)\treference(objects/worlds/tables)\tcount"]
    for r in report.rows:
        ref = reference.get(r.name)
        ref_text = "/".join(f"{x:.2f}" for x in ref) if ref else "-"
        lines.append(f"{r.name}\t{r.objects:.2f}/{r.worlds:.2f}/{r.tables:.2f}\t{ref_text}\t{r.count}")
    lines += [f"flag: {f}" for f in report.flags]
    return lines


def cmd_reproduce(cfg: RunConfig) -> Path:
    stages = [("gen-data", lambda: cmd_gen_data(cfg)), ("train", lambda: cmd_train(cfg)),
              ("eval-theories", lambda: cmd_eval_theories(cfg))]
    stages += [(f"fit-op {op}", lambda op=op: cmd_fit_op(cfg, op)) for op in OPS]
    stages += [(f"pca {op}", lambda op=op: cmd_pca(cfg, op)) for op in ("not", "or")]
    results = {}
    for name, run in stages:
        try:
            results[name] = run()
        except RefProbeError as exc:
            wrapper = UsageError if isinstance(exc, UsageError) else RefProbeError
            raise wrapper(f"stage {name} failed: {exc}") from exc
    _, acc = results["train"]
    lines = [f"config_digest: {cfg.digest()}", f"master_seed: {cfg.master_seed}",
             f"sample_k: {cfg.sample_k}", f"sample_source: {cfg.sample_source}",
             f"heldout_object_accuracy: {acc:.4f}", ""]
    lines += _format_comparison("theories", results["eval-theories"], REFERENCE_THEORIES) + [""]
    for op in OPS:
        rep = results[f"fit-op {op}"]
        lines += _format_comparison(rep.title, rep, REFERENCE_OPERATORS[op])
        lines += [f"aligned fit/test: {rep.meta['aligned_fit']}/{rep.meta['aligned_test']}, "
                  f"fit items: {rep.meta['fit_items']}", ""]
    path = cfg.path("summary.txt")
    path.write_text("\n".join(lines), encoding="utf-8")
    print("\n".join(lines))
    return path


# -- entry point -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refprobe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("gen-data", "train", "eval-theories", "fit-op", "pca", "reproduce"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        if name in ("train", "eval-theories", "fit-op", "pca"):
            p.add_argument("--checkpoint", type=Path)
        if name in ("eval-theories", "fit-op", "pca"):
            p.add_argument("--dataset", type=Path, help="evaluation split (default: <out>/test.jsonl)")
        if name == "fit-op":
            p.add_argument("--train-dataset", type=Path, help="fitting split (default: <out>/train.jsonl)")
        if name in ("fit-op", "pca"):
            p.add_argument("--op", choices=OPS, required=True)
        if name == "pca":
            p.add_argument("--operator", type=Path, help="operator file (default: <out>/operator_<op>.op)")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.checkpoint)
        elif args.command == "eval-theories":
            cmd_eval_theories(cfg, args.checkpoint, args.dataset)
        elif args.command == "fit-op":
            cmd_fit_op(cfg, args.op, args.checkpoint, args.dataset, args.train_dataset)
        elif args.command == "pca":
            cmd_pca(cfg, args.op, args.checkpoint, args.dataset, args.operator)
        else:
            cmd_reproduce(cfg)
    except UsageError as exc:
        print(f"refprobe: error: {exc}", file=sys.stderr)
        return 1
    except (RefProbeError, OSError, ValueError) as exc:
        print(f"refprobe: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
