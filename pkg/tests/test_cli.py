import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from artic_synth import cli
from artic_synth.corpus import FRAME_RATE, load_frame, read_corpus
from artic_synth.training import load_cvae, load_seq2seq

SYNTH_CFG = """\
# short sentences, two subjects
subjects = S1,S2
min_phones = 2
max_phones = 3
min_duration = 2
max_duration = 3
"""

TRAIN_CFG = """\
n_layers = 1
d_model = 64
n_heads = 2
ff_dim = 64
dropout = 0.0
res_channels = 16,16,16
up_channels = 16,16
max_epochs = 2
cvae_epochs = 1
latent_dim = 8
feature_channels = 8
seg_channels = 4,4,8,8
seg_epochs = 1
seg_finetune_epochs = 1
"""


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.cfg").write_text(SYNTH_CFG)
    (root / "train.cfg").write_text(TRAIN_CFG)
    assert run("gen-synthetic", "--out", root / "corpus", "--sentences", 10, "--seed", 0, "--config", root / "synth.cfg") == 0
    cfg = root / "train.cfg"
    assert run("train", "--variant", "cvae", "--corpus", root / "corpus", "--subject", "S1", "--out", root / "cvae", "--config", cfg) == 0
    for subject in ("S1", "S2"):
        assert run("train", "--variant", "s2s", "--corpus", root / "corpus", "--subject", subject, "--out", root / f"s2s_{subject}", "--config", cfg) == 0
    assert run(
        "train", "--variant", "s2s-v", "--corpus", root / "corpus", "--subject", "S1", "--out", root / "s2sv",
        "--config", cfg, "--cvae-ckpt", root / "cvae" / "S1_cvae.ckpt",
    ) == 0
    for subject in ("S1", "S2"):
        assert run("train", "--variant", "segnet", "--corpus", root / "corpus", "--subject", subject, "--out", root / f"seg_{subject}", "--config", cfg) == 0
    return root


class TestGenSynthetic:
    def test_layout(self, work):
        corpus = work / "corpus"
        assert sorted(p.name for p in corpus.iterdir()) == ["S1", "S2", "run_manifest.json"]
        utts = read_corpus(corpus, "S1")
        assert len(utts) == 10 and utts[0].video.shape[1:] == (3, 64, 64)
        assert all(u.frame_rate == FRAME_RATE for u in utts)
        assert (corpus / "S1" / utts[0].utt_id / "mask1_00000.png").exists()
        manifest = json.loads((corpus / "run_manifest.json").read_text())
        assert manifest["command"] == "gen-synthetic" and manifest["seed"] == 0
        assert manifest["config"]["min_phones"] == 2 and manifest["config"]["frame_rate"] == FRAME_RATE
        assert "S1/alignments.tsv" in manifest["artifacts"]

    def test_zero_sentences(self, tmp_path, capsys):
        assert run("gen-synthetic", "--out", tmp_path / "c", "--sentences", 0) == 2
        assert "usage" in capsys.readouterr().err
        assert not (tmp_path / "c").exists()

    @pytest.mark.parametrize("args", [["--sentences", "x"], []])
    def test_parse_errors(self, tmp_path, args):
        with pytest.raises(SystemExit) as exc:
            run("gen-synthetic", "--out", tmp_path / "c", *args)
        assert exc.value.code == 2

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("bogus = 1\n")
        assert run("gen-synthetic", "--out", tmp_path / "c", "--sentences", 1, "--config", tmp_path / "bad.cfg") == 2

    def test_cache_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ARTIC_SYNTH_CACHE", str(tmp_path / "cache"))
        assert run("gen-synthetic", "--sentences", 1, "--seed", 5) == 0
        assert (tmp_path / "cache" / "synthetic" / "seed5" / "S1" / "manifest.json").exists()


class TestTrain:
    def test_cvae_defaults_five_epochs(self, tmp_path):
        (tmp_path / "cfg").write_text("latent_dim = 8\nfeature_channels = 8\n")
        assert run("gen-synthetic", "--out", tmp_path / "c", "--sentences", 10, "--config", _write(tmp_path, SYNTH_CFG)) == 0
        assert run("train", "--variant", "cvae", "--corpus", tmp_path / "c", "--subject", "S1", "--out", tmp_path / "o", "--config", tmp_path / "cfg") == 0
        log = (tmp_path / "o" / "train_log.jsonl").read_text().splitlines()
        assert [json.loads(x)["epoch"] for x in log] == [1, 2, 3, 4, 5]

    def test_s2s_v_requires_cvae(self, work, capsys):
        code = run("train", "--variant", "s2s-v", "--corpus", work / "corpus", "--subject", "S1", "--out", work / "x")
        assert code == 2 and "--cvae-ckpt" in capsys.readouterr().err

    def test_unknown_subject(self, work):
        assert run("train", "--variant", "s2s", "--corpus", work / "corpus", "--subject", "S9", "--out", work / "x") == 2

    def test_cvae_subject_must_match(self, work):
        code = run(
            "train", "--variant", "s2s-v", "--corpus", work / "corpus", "--subject", "S2", "--out", work / "x",
            "--config", work / "train.cfg", "--cvae-ckpt", work / "cvae" / "S1_cvae.ckpt",
        )
        assert code == 2

    def test_artifacts(self, work):
        out = work / "s2sv"
        assert {p.name for p in out.iterdir()} == {"S1_s2s-v.ckpt", "train_log.jsonl", "run_manifest.json"}
        model, meta = load_seq2seq(out / "S1_s2s-v.ckpt")
        assert meta["subject"] == "S1" and model.variant == "s2s-v" and len(meta["inventory"]) == 41
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["inputs"]["subject"] == "S1" and manifest["config"]["variant"] == "s2s-v"
        assert load_cvae(work / "cvae" / "S1_cvae.ckpt")[1]["subject"] == "S1"

    def test_subjects_independent(self, work):
        a, ma = load_seq2seq(work / "s2s_S1" / "S1_s2s.ckpt")
        b, mb = load_seq2seq(work / "s2s_S2" / "S2_s2s.ckpt")
        assert (ma["subject"], mb["subject"]) == ("S1", "S2")
        assert ma["content_hash"] != mb["content_hash"] and ma["corpus_hash"] != mb["corpus_hash"]


def _write(tmp_path, text, name="synth.cfg"):
    (tmp_path / name).write_text(text)
    return tmp_path / name


class TestSynthesize:
    def test_frame_count_and_round_trip(self, work, tmp_path):
        (tmp_path / "a.tsv").write_text("u1\tsil\t0.0000\t0.5000\nu1\taa\t0.5000\t2.0000\n")
        ckpt = work / "s2s_S1" / "S1_s2s.ckpt"
        assert run("synthesize", "--ckpt", ckpt, "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "o") == 0
        frames = sorted((tmp_path / "o").glob("frame_*.png"))
        assert len(frames) == 46
        model, _ = load_seq2seq(ckpt)
        ids = np.array([1] * 12 + [2] * 34)
        video = model.synthesize(ids)
        back = np.stack([load_frame(p) for p in frames])
        assert np.abs(back - video).max() <= 1 / 255
        manifest = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
        assert manifest["config"]["n_frames"] == 46 and len(manifest["artifacts"]) == 46

    def test_s2s_seed_warning(self, work, tmp_path, caplog):
        (tmp_path / "a.tsv").write_text("u1\taa\t0.0\t0.3\n")
        ckpt = work / "s2s_S1" / "S1_s2s.ckpt"
        with caplog.at_level(logging.WARNING, logger="artic_synth"):
            assert run("synthesize", "--ckpt", ckpt, "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "a", "--seed", 1) == 0
        assert "ignored" in caplog.text
        assert run("synthesize", "--ckpt", ckpt, "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "b", "--seed", 2) == 0
        for pa, pb in zip(sorted((tmp_path / "a").glob("*.png")), sorted((tmp_path / "b").glob("*.png"))):
            assert pa.read_bytes() == pb.read_bytes()

    def test_s2s_v_seed(self, work, tmp_path):
        (tmp_path / "a.tsv").write_text("u1\taa\t0.0\t0.3\n")
        ckpt = work / "s2sv" / "S1_s2s-v.ckpt"
        for name, seed in (("a", 1), ("b", 1), ("c", 2)):
            assert run("synthesize", "--ckpt", ckpt, "--alignment", tmp_path / "a.tsv", "--out", tmp_path / name, "--seed", seed) == 0
        read = lambda d: b"".join(p.read_bytes() for p in sorted((tmp_path / d).glob("*.png")))
        assert read("a") == read("b") and read("a") != read("c")

    def test_unknown_phoneme(self, work, tmp_path, capsys):
        (tmp_path / "a.tsv").write_text("u1\tsil\t0.0\t1.0\nu1\tzzz\t1.0\t2.0\n")
        code = run("synthesize", "--ckpt", work / "s2s_S1" / "S1_s2s.ckpt", "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "o")
        assert code == 1 and "zzz" in capsys.readouterr().err

    def test_multi_utterance_file(self, work, tmp_path):
        ckpt = work / "s2s_S1" / "S1_s2s.ckpt"
        align = work / "corpus" / "S1" / "alignments.tsv"
        assert run("synthesize", "--ckpt", ckpt, "--alignment", align, "--out", tmp_path / "o") == 2
        assert run("synthesize", "--ckpt", ckpt, "--alignment", align, "--out", tmp_path / "o", "--utt-id", "S1_s0003") == 0

    def test_mp4_without_ffmpeg(self, work, tmp_path, monkeypatch):
        monkeypatch.setattr(cli.shutil, "which", lambda name: None)
        (tmp_path / "a.tsv").write_text("u1\taa\t0.0\t0.3\n")
        code = run("synthesize", "--ckpt", work / "s2s_S1" / "S1_s2s.ckpt", "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "o", "--export", "mp4")
        assert code == 1 and not (tmp_path / "o").exists()

    def test_missing_checkpoint(self, tmp_path):
        (tmp_path / "a.tsv").write_text("u1\taa\t0.0\t0.3\n")
        assert run("synthesize", "--ckpt", tmp_path / "nope.ckpt", "--alignment", tmp_path / "a.tsv", "--out", tmp_path / "o") == 1


class TestEvaluate:
    def test_report(self, work, tmp_path):
        code = run(
            "evaluate", "--segnet-ckpt", work / "seg_S1" / "S1_segnet.ckpt", "--model-ckpt", work / "s2s_S1" / "S1_s2s.ckpt",
            "--corpus", work / "corpus", "--split", "test", "--out", tmp_path / "r.csv",
        )
        assert code == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "subject,variant,mask,mean,std,n_utterances" and len(lines) == 4
        for line in lines[1:]:
            subject, variant, _, mean, std, n = line.split(",")
            assert (subject, variant, n) == ("S1", "s2s", "1") and 0.0 <= float(mean) <= 1.0
        assert (tmp_path / "r.csv.manifest.json").exists()

    def test_subject_mismatch(self, work, tmp_path, capsys):
        code = run(
            "evaluate", "--segnet-ckpt", work / "seg_S2" / "S2_segnet.ckpt", "--model-ckpt", work / "s2s_S1" / "S1_s2s.ckpt",
            "--corpus", work / "corpus", "--out", tmp_path / "r.csv",
        )
        assert code == 2 and "mismatch" in capsys.readouterr().err

    def test_manifest_disagreement(self, work, tmp_path):
        import shutil

        d = tmp_path / "seg"
        shutil.copytree(work / "seg_S1", d)
        manifest = json.loads((d / "run_manifest.json").read_text())
        manifest["inputs"]["subject"] = "S2"
        (d / "run_manifest.json").write_text(json.dumps(manifest))
        code = run(
            "evaluate", "--segnet-ckpt", d / "S1_segnet.ckpt", "--model-ckpt", work / "s2s_S1" / "S1_s2s.ckpt",
            "--corpus", work / "corpus", "--out", tmp_path / "r.csv",
        )
        assert code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "artic_synth", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-synthetic" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "artic_synth", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2


def test_config_precedence(tmp_path):
    (tmp_path / "c.cfg").write_text("learning_rate = 5e-4  # comment\n")
    cfg = cli.resolve_train_config(tmp_path / "c.cfg", seed=3)
    assert cfg["learning_rate"] == "5e-4" and cfg["seed"] == "3" and cfg["patience"] == "10"
