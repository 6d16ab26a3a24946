import pytest

from engage.cli import FILES, PRED_HEADER, main, read_predictions

STAGES = ("gen", "fit-sketch", "partition", "build-store", "featurize", "train", "predict", "eval")


def run_all(workdir, *extra):
    for stage in STAGES:
        rc = main([stage, "-w", str(workdir), "--profile", "smoke", *extra])
        assert rc == 0, stage


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    run_all(wd)
    return wd


class TestPipeline:
    def test_artifacts(self, workdir):
        for key in ("log", "followers", "embeddings", "codec", "plan", "store", "features", "model",
                    "train_log", "predictions", "report", "report_text", "report_fine",
                    "fig_groups", "fig_fine", "fig_languages"):
            assert (workdir / FILES[key]).stat().st_size > 0, key

    def test_figures_are_png(self, workdir):
        for key in ("fig_groups", "fig_fine", "fig_languages"):
            assert (workdir / FILES[key]).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_predictions_format(self, workdir):
        text = (workdir / FILES["predictions"]).read_text().splitlines()
        assert text[0] == PRED_HEADER
        assert text[1].startswith("#config ")
        keys, probs = read_predictions(workdir / FILES["predictions"])
        assert len(keys) == len(text) - 2 > 0
        assert probs.shape == (len(keys), 4)
        assert ((probs > 0) & (probs < 1)).all()

    def test_report_non_empty(self, workdir):
        rows = [line.split("\t") for line in (workdir / FILES["report"]).read_text().splitlines()
                if not line.startswith("#")]
        assert {r[0] for r in rows} == {"AP", "RCE"}
        assert {r[1] for r in rows} == {"like", "reply", "retweet", "quote"}
        assert all(len(r) == 4 for r in rows)
        like_ap = [r for r in rows if r[:3] == ["AP", "like", "all"]][0][3]
        assert 0.0 < float(like_ap) <= 1.0

    def test_rerun_is_idempotent(self, workdir):
        before = (workdir / FILES["predictions"]).read_bytes()
        assert main(["predict", "-w", str(workdir), "--profile", "smoke"]) == 0
        assert (workdir / FILES["predictions"]).read_bytes() == before

    def test_bench_and_budget_exit(self, workdir):
        args = ["bench", "-w", str(workdir), "--profile", "smoke", "--no-pin",
                "--set", "bench.predictions=50", "--set", "bench.warmup=5"]
        assert main(args) == 0
        lines = dict(line.split("\t") for line in (workdir / FILES["bench"]).read_text().splitlines())
        assert int(lines["predictions"]) == 50
        assert (workdir / FILES["fig_latency"]).exists()
        assert main(args + ["--set", "bench.budget_p50_ms=0.000001", "--enforce"]) == 4


class TestErrors:
    def test_missing_upstream(self, tmp_path):
        assert main(["train", "-w", str(tmp_path), "--profile", "smoke"]) == 3

    def test_hash_mismatch(self, workdir):
        # a different sketch width invalidates the codec-dependent artifacts
        assert main(["featurize", "-w", str(workdir), "--profile", "smoke", "--set", "sketch.width=8"]) == 2

    def test_eval_settings_do_not_invalidate(self, workdir):
        assert main(["eval", "-w", str(workdir), "--profile", "smoke", "--set", "eval.groups=3",
                     "--set", "eval.figures=false"]) == 0

    def test_bad_config(self, tmp_path):
        assert main(["gen", "-w", str(tmp_path), "--set", "model.nope=1"]) == 2

    def test_corrupt_log(self, tmp_path):
        assert main(["gen", "-w", str(tmp_path), "--profile", "smoke"]) == 0
        log = tmp_path / FILES["log"]
        lines = log.read_text().splitlines(keepends=True)
        log.write_text("".join(lines[:-1]))
        assert main(["partition", "-w", str(tmp_path), "--profile", "smoke"]) == 3

    def test_show_config(self, capsys):
        assert main(["show-config", "--profile", "smoke"]) == 0
        assert '"hidden_width": 32' in capsys.readouterr().out


def test_deterministic_end_to_end(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_all(a)
    run_all(b)
    for key in ("log", "codec", "plan", "store", "features", "model", "predictions", "report",
                "report_text", "report_fine", "fig_groups"):
        assert (a / FILES[key]).read_bytes() == (b / FILES[key]).read_bytes(), key
