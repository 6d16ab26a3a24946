"""Command-line pipeline: gen -> fit-sketch -> partition -> build-store ->
featurize -> train -> predict -> eval, plus a latency bench.

All artifacts live in one work directory under fixed names. Exit codes:
0 ok, 2 configuration error, 3 data error, 4 latency budget violated
(``bench --enforce``).
"""

from __future__ import annotations

import os

# single-threaded BLAS; must be set before numpy loads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Optional  # noqa: E402

import numpy as np  # noqa: E402

from .config import ConfigError, RunConfig, load_config, PROFILES  # noqa: E402
from .records import LogFormatError  # noqa: E402

log = logging.getLogger("engage")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BUDGET = 0, 2, 3, 4

FILES = {
    "log": "log.tsv",
    "followers": "followers.tsv",
    "embeddings": "embeddings.txt",
    "codec": "codec.txt",
    "plan": "plan.tsv",
    "store": "store.txt",
    "features": "features.npz",
    "model": "model.bin",
    "train_log": "train_log.tsv",
    "predictions": "predictions.tsv",
    "report": "report.tsv",
    "report_text": "report.txt",
    "report_fine": "report_fine.tsv",
    "fig_groups": "ap_by_group.png",
    "fig_fine": "ap_by_popularity.png",
    "fig_languages": "ap_by_language.png",
    "bench": "bench.tsv",
    "fig_latency": "latency.png",
}
PRED_HEADER = "#predictions v1"


class BudgetExceeded(RuntimeError):
    pass


class Workdir:
    def __init__(self, root: str):
        self.root = Path(root)

    def __getitem__(self, key: str) -> Path:
        return self.root / FILES[key]

    def need(self, key: str) -> Path:
        p = self[key]
        if not p.exists():
            raise FileNotFoundError(f"missing upstream artifact {p} (run the stage that writes it first)")
        return p


# -- config provenance ----------------------------------------------------------


def read_meta(path: Path) -> Optional[str]:
    """Payload of the ``#config`` line that follows an artifact's header."""
    with open(path, "rb") as fh:
        fh.readline()
        line = fh.readline()
    if line.startswith(b"#config "):
        return line[len(b"#config "):].decode().rstrip("\n")
    return None


def check_meta(meta: Optional[str], cfg: RunConfig, stage: str, path: Path) -> None:
    if meta is None:
        return
    expected = cfg.section_hash(stage)[0]
    found = meta.split(" ", 1)[0]
    if found != expected:
        raise ConfigError(
            f"{path} was produced under a different configuration (hash {found}, current {expected}); "
            f"rerun '{stage}' or restore the configuration"
        )


# -- stages -----------------------------------------------------------------------


def cmd_gen(cfg: RunConfig, wd: Workdir, args) -> None:
    from .records import write_embeddings, write_followers, write_log
    from .synth import generate_synthetic

    data = generate_synthetic(cfg.generator_config(), cfg.generator.seed)
    wd.root.mkdir(parents=True, exist_ok=True)
    n = write_log(wd["log"], data.log, meta=cfg.meta("gen"))
    write_followers(wd["followers"], data.followers)
    write_embeddings(wd["embeddings"], data.token_embeddings)
    log.info("wrote %d records, %d follower sets, %s embeddings", n, len(data.followers),
             "x".join(map(str, data.token_embeddings.shape)))


def cmd_fit_sketch(cfg: RunConfig, wd: Workdir, args) -> None:
    from .records import read_embeddings
    from .sketch import SketchParams, fit_codec, save_codec

    emb = read_embeddings(wd.need("embeddings"))
    s = cfg.sketch
    codec = fit_codec(emb, SketchParams(s.depth, s.width, emb.shape[1], s.seed, s.density_aware))
    save_codec(wd["codec"], codec, meta=cfg.meta("fit-sketch"))
    log.info("fitted codec depth=%d width=%d over %d tokens", s.depth, s.width, emb.shape[0])


def _load_log(cfg: RunConfig, wd: Workdir):
    from .records import load_log

    path = wd.need("log")
    check_meta(read_meta(path), cfg, "gen", path)
    return load_log(path)


def _load_plan(cfg: RunConfig, wd: Workdir, n_records: int):
    from .partition import load_plan

    path = wd.need("plan")
    check_meta(read_meta(path), cfg, "partition", path)
    plan = load_plan(path)
    if len(plan.chunks) != n_records:
        raise LogFormatError(f"plan covers {len(plan.chunks)} records, log has {n_records}", path)
    return plan


def _load_codec(cfg: RunConfig, wd: Workdir):
    from .sketch import load_codec

    path = wd.need("codec")
    check_meta(read_meta(path), cfg, "fit-sketch", path)
    return load_codec(path)


def _load_store(cfg: RunConfig, wd: Workdir):
    from .features.store import load_store

    path = wd.need("store")
    check_meta(read_meta(path), cfg, "build-store", path)
    return load_store(path)


def _load_model(cfg: RunConfig, wd: Workdir):
    from .model import load_model

    path = wd.need("model")
    check_meta(read_meta(path), cfg, "train", path)
    return load_model(path)


def cmd_partition(cfg: RunConfig, wd: Workdir, args) -> None:
    from .partition import plan_pipeline, save_plan

    records = _load_log(cfg, wd)
    p = cfg.partition
    plan = plan_pipeline(records, p.validation_days, p.k, p.eval_fraction, p.seed)
    save_plan(wd["plan"], plan, meta=cfg.meta("partition"))
    log.info("stage 1: %d day parts, stage 2: %d random parts, holdout %d rows",
             len(plan.stage1), len(plan.stage2), len(plan.holdout_rows()))


def cmd_build_store(cfg: RunConfig, wd: Workdir, args) -> None:
    from .features.store import save_store
    from .pipeline import inference_store
    from .records import read_followers

    records = _load_log(cfg, wd)
    plan = _load_plan(cfg, wd, len(records))
    followers = read_followers(wd.need("followers"))
    store = inference_store(records, followers, plan, cfg.store_config())
    save_store(wd["store"], store, meta=cfg.meta("build-store"))
    log.info("store: %d pairs, %d clusters", len(store.pair_counts), len(set(store.similar_user_clusters.values())))


def _layout(cfg: RunConfig, codec):
    from .features.assemble import FeatureLayout

    return FeatureLayout.for_codec(codec, cfg.store.language_vocab)


def cmd_featurize(cfg: RunConfig, wd: Workdir, args) -> None:
    from .pipeline import featurize_plan, save_features
    from .records import read_followers

    records = _load_log(cfg, wd)
    plan = _load_plan(cfg, wd, len(records))
    codec = _load_codec(cfg, wd)
    followers = read_followers(wd.need("followers"))
    chunks = featurize_plan(records, followers, codec, plan, cfg.store_config(), _layout(cfg, codec))
    save_features(wd["features"], chunks, meta=cfg.meta("featurize"))
    log.info("featurized %d chunks", len(chunks))


def cmd_train(cfg: RunConfig, wd: Workdir, args) -> None:
    from .model import save_model, train
    from .partition import load_plan
    from .pipeline import load_features, stage_parts

    path = wd.need("features")
    chunks, meta = load_features(path)
    check_meta(meta, cfg, "featurize", path)
    plan = load_plan(wd.need("plan"))
    codec = _load_codec(cfg, wd)
    rows = []

    def on_epoch(entry):
        rows.append(f"{entry.stage}\t{entry.epoch}\t{entry.steps}\t{entry.mean_loss:.8f}")
        log.info("stage %d epoch %d: %d steps, mean loss %.5f", entry.stage, entry.epoch, entry.steps, entry.mean_loss)

    net, _ = train(stage_parts(chunks, plan.stage1), stage_parts(chunks, plan.stage2),
                   cfg.model_config(), _layout(cfg, codec), on_epoch)
    save_model(wd["model"], net, meta=cfg.meta("train"))
    with open(wd["train_log"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stage\tepoch\tsteps\tmean_loss\n")
        fh.write("".join(r + "\n" for r in rows))


def _eval_rows(plan, which: str) -> np.ndarray:
    if which == "holdout":
        return plan.holdout_rows()
    return np.arange(len(plan.chunks))


def cmd_predict(cfg: RunConfig, wd: Workdir, args) -> None:
    from .features.assemble import Assembler
    from .model import InferenceNet

    records = _load_log(cfg, wd)
    plan = _load_plan(cfg, wd, len(records))
    net = _load_model(cfg, wd)
    assembler = Assembler(_load_store(cfg, wd), _load_codec(cfg, wd), net.layout)
    rows = _eval_rows(plan, args.rows)
    chosen = [records[i] for i in rows]
    probs = InferenceNet(net).predict_batch(assembler.assemble_many(chosen)) if chosen else np.zeros((0, 4))
    out = wd["predictions"]
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PRED_HEADER + "\n")
        fh.write(f"#config {cfg.meta('predict')}\n")
        for rec, p in zip(chosen, probs):
            fh.write(f"{rec.tweet_id}\t{rec.engaging_user}\t" + "\t".join(f"{v:.9f}" for v in p) + "\n")
    log.info("wrote %d predictions to %s", len(chosen), out)


def read_predictions(path: Path) -> tuple[list[tuple[int, int]], np.ndarray]:
    keys, probs = [], []
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != PRED_HEADER:
            raise LogFormatError("bad header", path, 1)
        for lineno, line in enumerate(fh, start=2):
            if line.startswith("#"):
                continue
            f = line.rstrip("\n").split("\t")
            if len(f) != 6:
                raise LogFormatError("expected 6 fields", path, lineno)
            try:
                keys.append((int(f[0]), int(f[1])))
                probs.append([float(x) for x in f[2:]])
            except ValueError:
                raise LogFormatError("malformed prediction row", path, lineno) from None
    return keys, np.array(probs, dtype=np.float64).reshape(-1, 4)


def cmd_eval(cfg: RunConfig, wd: Workdir, args) -> None:
    import warnings

    from .features.assemble import labels_of
    from .metrics import grouped_eval

    records = _load_log(cfg, wd)
    plan = _load_plan(cfg, wd, len(records))
    path = wd.need("predictions")
    check_meta(read_meta(path), cfg, "predict", path)
    keys, probs = read_predictions(path)
    chosen = [records[i] for i in _eval_rows(plan, args.rows)]
    if len(chosen) != len(keys) or any(
        (r.tweet_id, r.engaging_user) != k for r, k in zip(chosen, keys)
    ):
        raise LogFormatError("predictions do not line up with the evaluated rows", path)
    y = labels_of(chosen)
    followers = [r.engaged_follower_count for r in chosen]
    langs = [r.language for r in chosen]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = grouped_eval(followers, probs, y, cfg.eval.groups, languages=langs)
    for w in caught:
        log.warning("%s", w.message)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fine = grouped_eval(followers, probs, y, cfg.eval.fine_groups)
    if caught:
        log.info("%d of %d fine group/reaction cells have no positives", len(caught), 4 * cfg.eval.fine_groups)

    with open(wd["report"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#config {cfg.meta('predict')}\n")
        fh.write("".join(line + "\n" for line in report.lines()))
    with open(wd["report_fine"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in fine.lines()))
    text = report.table()
    with open(wd["report_text"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"rows evaluated: {len(chosen)}\n{text}\n")
    print(text)
    if cfg.eval.figures:
        from .plotting import plot_group_ap, plot_language_ap

        plot_group_ap(report, wd["fig_groups"], f"{cfg.eval.groups} author-popularity groups")
        plot_group_ap(fine, wd["fig_fine"], f"{cfg.eval.fine_groups} author-popularity groups")
        plot_language_ap(report, wd["fig_languages"])


def cmd_bench(cfg: RunConfig, wd: Workdir, args) -> None:
    from .bench import run_bench
    from .features.assemble import Assembler
    from .model import InferenceNet

    records = _load_log(cfg, wd)
    plan = _load_plan(cfg, wd, len(records))
    net = _load_model(cfg, wd)
    assembler = Assembler(_load_store(cfg, wd), _load_codec(cfg, wd), net.layout)
    replay = [records[i] for i in _eval_rows(plan, args.rows)] or records
    b = cfg.bench
    result = run_bench(InferenceNet(net), assembler, replay, b.predictions, b.warmup,
                       None if args.no_pin else b.cpu)
    lines = result.lines() + [f"budget_p95_ms\t{b.budget_p95_ms}", f"budget_p50_ms\t{b.budget_p50_ms}"]
    ok = result.p95 <= b.budget_p95_ms and result.p50 <= b.budget_p50_ms
    lines.append(f"within_budget\t{int(ok)}")
    with open(wd["bench"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))
    print("\n".join(lines))
    if cfg.eval.figures:
        from .plotting import plot_latency

        plot_latency(result.latencies_ms, wd["fig_latency"], b.budget_p95_ms, b.budget_p50_ms)
    if args.enforce and not ok:
        raise BudgetExceeded(f"p50 {result.p50:.3f} ms / p95 {result.p95:.3f} ms over budget")


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic log, follower sets and token embeddings"),
    "fit-sketch": (cmd_fit_sketch, "fit the token sketch codec"),
    "partition": (cmd_partition, "split the log into training parts and a holdout"),
    "build-store": (cmd_build_store, "build the inference-time feature store"),
    "featurize": (cmd_featurize, "assemble features for every training part"),
    "train": (cmd_train, "train the model (two stages)"),
    "predict": (cmd_predict, "write engagement probabilities"),
    "eval": (cmd_eval, "score predictions (AP, RCE, popularity groups) and draw figures"),
    "bench": (cmd_bench, "measure single-prediction latency on one core"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="engage", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-w", "--workdir", default=".", help="artifact directory (default: .)")
    common.add_argument("-c", "--config", help="TOML config file")
    common.add_argument("--profile", default="desk", choices=sorted(PROFILES),
                        help="preset applied before the config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("predict", "eval", "bench"):
            p.add_argument("--rows", choices=("holdout", "all"), default="holdout",
                           help="which log rows to use (default: the local-evaluation holdout)")
        if name == "bench":
            p.add_argument("--enforce", action="store_true", help="exit 4 when over the latency budget")
            p.add_argument("--no-pin", action="store_true", help="do not pin to one CPU")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides, args.profile)
        if args.command == "show-config":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        fn, _ = COMMANDS[args.command]
        fn(cfg, Workdir(args.workdir), args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        log.error("latency budget violated: %s", exc)
        return EXIT_BUDGET
    except (FileNotFoundError, LogFormatError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
