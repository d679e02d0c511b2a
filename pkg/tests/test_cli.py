import json
import subprocess
import sys

import pytest

from sged import config as C
from sged.cli import main

TINY = ["--set", "encoder.hidden=6", "--set", "decoder.label_dim=3", "--set", "train.epochs=2", "--set", "train.batch_size=4"]


@pytest.fixture
def corpus(tmp_path):
    d = tmp_path / "data"
    rc = main(["gen-synth", "--data-dir", str(d), "--seed", "3", "--n-train", "8", "--n-val", "4", "--n-test", "4", "--feature-dim", "6"])
    assert rc == 0
    return d


@pytest.fixture
def trained(corpus, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--data-dir", str(corpus), "--out-dir", str(out), *TINY]) == 0
    return corpus, out


def test_gen_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-synth", "--seed", "7", "--data-dir", str(tmp_path / name), "--n-train", "10"]) == 0
    for f in ("labels.txt", "train.jsonl", "val.jsonl", "test.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_synth_vocab_lines(tmp_path):
    assert main(["gen-synth", "--n-labels", "4", "--data-dir", str(tmp_path), "--n-train", "5"]) == 0
    assert (tmp_path / "labels.txt").read_text().splitlines() == ["emo0", "emo1", "emo2", "emo3"]


def test_gen_synth_default_sizes(tmp_path):
    assert main(["gen-synth", "--data-dir", str(tmp_path)]) == 0
    counts = {s: len((tmp_path / f"{s}.jsonl").read_text().splitlines()) for s in ("train", "val", "test")}
    assert counts == {"train": 200, "val": 50, "test": 50}


def test_config_echo_round_trips(tmp_path, capsys):
    assert main(["gen-synth", "--data-dir", str(tmp_path), "--n-train", "3", "--set", "train.lr=5e-4"]) == 0
    echoed = capsys.readouterr().err
    assert echoed.startswith("# effective config (hash ")
    cfg = C.parse_text(echoed)
    assert cfg["train.lr"] == 5e-4 and cfg["synth.n_train"] == 3
    assert set(cfg) == set(C.DEFAULTS)


def test_train_writes_artifacts(trained):
    _, out = trained
    assert (out / "model.ckpt").exists()
    log = (out / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_wf1" and len(log) == 3
    assert C.load_file(out / "config.txt")["encoder.hidden"] == 6


def test_train_deterministic(corpus, tmp_path):
    for name in ("r1", "r2"):
        assert main(["train", "--data-dir", str(corpus), "--out-dir", str(tmp_path / name), *TINY]) == 0
    for f in ("model.ckpt", "train_log.csv"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_eval_report(trained):
    data, out = trained
    assert main(["eval", "--data-dir", str(data), "--out-dir", str(out)]) == 0
    rep = json.loads((out / "eval_report.json").read_text())
    assert {"weighted_f1", "accuracy", "per_class", "confusion_matrix", "f1_by_speaker_count"} <= set(rep)
    n = sum(len(json.loads(line)["utterances"]) for line in (data / "test.jsonl").read_text().splitlines())
    assert sum(map(sum, rep["confusion_matrix"])) == n


def test_eval_vocab_mismatch_exit_2(trained, tmp_path, capsys):
    data, out = trained
    other = tmp_path / "other"
    other.mkdir()
    (other / "labels.txt").write_text("happy\nsad\nangry\nneutral\n")
    (other / "test.jsonl").write_text((data / "test.jsonl").read_text())
    capsys.readouterr()
    assert main(["eval", "--data-dir", str(other), "--out-dir", str(out)]) == 2
    err = capsys.readouterr().err
    assert "happy, sad, angry, neutral" in err and "emo0, emo1, emo2, emo3" in err


def test_inspect_one_row_per_non_first(trained, capsys):
    data, out = trained
    capsys.readouterr()
    assert main(["inspect", "--data-dir", str(data), "--out-dir", str(out), "--dialogue", "d01"]) == 0
    dump = json.loads(capsys.readouterr().out)
    speakers = [u["speaker"] for u in dump["utterances"]]
    non_first = [i + 1 for i, s in enumerate(speakers) if s in speakers[:i]]
    assert [row["index"] for row in dump["alpha_intra"]] == non_first
    for row in dump["alpha_intra"]:
        assert len(row["weights"]) == row["index"]
        assert abs(sum(row["weights"]) - 1.0) <= 1e-12
    assert len(dump["decode"]) == len(speakers)
    assert (out / "inspect_d01.json").exists()


def test_inspect_unknown_dialogue(trained, capsys):
    data, out = trained
    assert main(["inspect", "--data-dir", str(data), "--out-dir", str(out), "--dialogue", "nope"]) == 1
    assert "nope" in capsys.readouterr().err


def test_ablate_subset(corpus, tmp_path):
    out = tmp_path / "abl"
    args = ["ablate", "--data-dir", str(corpus), "--out-dir", str(out), "--variants", "SGED|w/o SGD", *TINY]
    assert main(args + ["--set", "train.seeds_for_average=2"]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,mean_wf1,std_wf1,seed_0,seed_1"
    assert [line.split(",")[0] for line in lines[1:]] == ["SGED", "w/o SGD"]
    assert (out / "ablation.txt").read_text().startswith("variant")


def test_ablate_unknown_variant(corpus, tmp_path):
    assert main(["ablate", "--data-dir", str(corpus), "--out-dir", str(tmp_path), "--variants", "w/o magic"]) == 2


def test_gradcheck_pass_line(capsys):
    assert main(["gradcheck", "--h", "8", "--encoder", "ffn_passthrough", "--n-seeds", "1", "--seed", "11"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("PASS max_rel_err < 1e-6")
    assert any("sse.W_q_intra" in line for line in out)


def test_unknown_config_key_exit_2(tmp_path, capsys):
    assert main(["train", "--data-dir", str(tmp_path), "--set", "train.nope=1"]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_missing_data_exit_1(tmp_path, capsys):
    assert main(["train", "--data-dir", str(tmp_path / "absent")]) == 1
    assert "labels.txt" in capsys.readouterr().err


def test_missing_checkpoint_exit_1(corpus, tmp_path):
    assert main(["eval", "--data-dir", str(corpus), "--out-dir", str(tmp_path / "empty")]) == 1


def test_env_override(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("SGED_TRAIN__EPOCHS", "1")
    out = tmp_path / "env"
    args = ["train", "--data-dir", str(corpus), "--out-dir", str(out), "--set", "encoder.hidden=4", "--set", "decoder.label_dim=2"]
    assert main(args) == 0
    assert len((out / "train_log.csv").read_text().splitlines()) == 2


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sged", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-synth", "train", "eval", "ablate", "gradcheck", "inspect"):
        assert cmd in proc.stdout
    assert "SGED_" in proc.stdout
