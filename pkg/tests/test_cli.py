import json

import numpy as np
import pytest

from core import dafx
from core.audio import write_wav
from core.checkpoint import save_checkpoint
from core.types import AudioBuffer, ParamVector
from main import build_parser, main


def _run(capsys, *argv):
    code = main(list(argv))
    lines = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(lines[-1])


def _common(config_file, run_dir):
    return ["--config", str(config_file), "--run-dir", str(run_dir), "--quiet"]


def test_gen_data_writes_triples(capsys, tiny_config_file, tmp_path):
    run_dir = tmp_path / "run"
    code, summary = _run(capsys, "gen-data", "--effect", "delay", *_common(tiny_config_file, run_dir))
    assert code == 0 and summary["status"] == "ok" and summary["count"] == 4
    data = run_dir / "data"
    assert len(list(data.glob("*.wav"))) == 12
    assert len(list(data.glob("*.json"))) == 1
    doc = json.loads((data / "thetas.json").read_text())
    assert doc["effect_id"] == "delay"
    assert len(doc["examples"]) == 4 and "feedback" in doc["examples"][0]["physical"]
    assert (run_dir / "config.json").exists()


def test_gen_data_is_byte_reproducible(capsys, tiny_config_file, tmp_path):
    for name in ("a", "b"):
        code, _ = _run(capsys, "gen-data", "--effect", "ringmod", "--count", "2",
                       *_common(tiny_config_file, tmp_path / name))
        assert code == 0
    first = sorted((tmp_path / "a" / "data").glob("*.wav"))
    assert len(first) == 6
    for path in first:
        assert path.read_bytes() == (tmp_path / "b" / "data" / path.name).read_bytes()
    thetas = [json.loads((tmp_path / n / "data" / "thetas.json").read_text())["examples"] for n in ("a", "b")]
    assert thetas[0] == thetas[1]


def test_unknown_effect_exits_with_config_code(capsys, tiny_config_file, tmp_path):
    code, summary = _run(capsys, "gen-data", "--effect", "wah", *_common(tiny_config_file, tmp_path))
    assert code == 2
    assert summary["error"] == "UnknownEffect" and "ambience" in summary["message"]


def test_missing_effect_flag(capsys, tiny_config_file, tmp_path):
    code, summary = _run(capsys, "gen-data", *_common(tiny_config_file, tmp_path))
    assert code == 2 and summary["status"] == "error"


def test_bad_override_key(capsys, tmp_path):
    code, summary = _run(capsys, "train-vae", "--run-dir", str(tmp_path), "--set", "vae.width=3")
    assert code == 2 and "vae.width" in summary["message"]


def test_describe_effect(capsys):
    code, summary = _run(capsys, "describe-effect", "--effect", "overdrive")
    assert code == 0
    assert summary["id"] == "overdrive"
    code, summary = _run(capsys, "describe-effect")
    assert len(summary["effects"]) == 9


def test_freeze_encoder_flag_parsing():
    parser = build_parser()
    assert parser.parse_args(["train-e2e", "--freeze-encoder=false"]).freeze is False
    assert parser.parse_args(["train-e2e", "--freeze-encoder"]).freeze is True
    assert parser.parse_args(["train-e2e"]).freeze is None


def test_unfrozen_training_uses_small_lr(capsys, tiny_config_file, tmp_path):
    run_dir = tmp_path / "run"
    code, summary = _run(capsys, "train-e2e", "--effect", "overdrive", "--freeze-encoder=false",
                         "--set", "e2e.epochs=1", *_common(tiny_config_file, run_dir))
    assert code == 0
    assert summary["lr"] == pytest.approx(3e-5)
    assert (run_dir / "e2e_overdrive.ndst").exists()
    assert (run_dir / "e2e_overdrive_metrics.csv").exists()


def test_frozen_training_without_encoder_fails(capsys, tiny_config_file, tmp_path):
    code, summary = _run(capsys, "train-e2e", "--effect", "delay", *_common(tiny_config_file, tmp_path))
    assert code == 4 and summary["error"] == "CheckpointError"


@pytest.fixture
def wav_pair(tmp_path):
    t = np.arange(2048) / 8000
    dry, ref = tmp_path / "dry.wav", tmp_path / "ref.wav"
    write_wav(AudioBuffer(0.5 * np.sin(2 * np.pi * 220 * t), 8000), dry)
    write_wav(AudioBuffer(np.tanh(5 * np.sin(2 * np.pi * 330 * t)), 8000), ref)
    return dry, ref


def test_style_match_outputs(capsys, tiny_config_file, tmp_path, trained_e2e, wav_pair):
    ckpt = tmp_path / "e2e_overdrive.ndst"
    save_checkpoint(trained_e2e.checkpoint, ckpt)
    out = tmp_path / "out"
    code, summary = _run(capsys, "style-match", "--effect", "overdrive", "--checkpoint", str(ckpt),
                         "--input", str(wav_pair[0]), "--ref", str(wav_pair[1]), "--out", str(out),
                         *_common(tiny_config_file, tmp_path / "run"))
    assert code == 0
    assert (out / "matched.wav").exists()
    params = json.loads((out / "params.json").read_text())
    assert len(params["theta"]) == 3 == len(summary["theta"])


def test_style_match_effect_mismatch(capsys, tiny_config_file, tmp_path, trained_e2e, wav_pair):
    ckpt = tmp_path / "model.ndst"
    save_checkpoint(trained_e2e.checkpoint, ckpt)
    code, summary = _run(capsys, "style-match", "--effect", "delay", "--checkpoint", str(ckpt),
                         "--input", str(wav_pair[0]), "--ref", str(wav_pair[1]),
                         *_common(tiny_config_file, tmp_path / "run"))
    assert code == 4 and summary["error"] == "EffectMismatch"


def test_not_a_checkpoint(capsys, tiny_config_file, tmp_path):
    bogus = tmp_path / "bogus.ndst"
    bogus.write_bytes(b"RIFF0000")
    code, _ = _run(capsys, "eval-e2e", "--effect", "delay", "--checkpoint", str(bogus),
                   *_common(tiny_config_file, tmp_path / "run"))
    assert code == 4


def test_eval_commands_write_reports(capsys, tiny_config_file, tmp_path, trained_vae, trained_e2e):
    run_dir = tmp_path / "run"
    save_checkpoint(trained_vae.checkpoint, run_dir / "vae.ndst")
    save_checkpoint(trained_e2e.checkpoint, run_dir / "e2e_overdrive.ndst")
    common = _common(tiny_config_file, run_dir)

    code, summary = _run(capsys, "eval-mmi", "--effect", "overdrive", *common)
    assert code == 0 and set(summary["mmi"]) == {"muffle", "drive", "output_db"}
    assert (run_dir / "mmi_overdrive.csv").exists()

    code, summary = _run(capsys, "eval-e2e", "--effect", "overdrive", "--count", "2", *common)
    assert code == 0 and summary["n"] == 2
    assert len((run_dir / "eval_e2e_overdrive.csv").read_text().splitlines()) == 3

    code, summary = _run(capsys, "eval-classifier", *common)
    assert code == 0 and 0.0 <= summary["encoder_accuracy"] <= 1.0
    assert (run_dir / "confusion_pca.csv").exists()


def test_domain_value_errors_become_json_errors(capsys, monkeypatch):
    def bad_theta(effect_id):
        return ParamVector.of(effect_id, [2.0, 0.0, 0.0])

    monkeypatch.setattr(dafx, "describe", bad_theta)
    code, summary = _run(capsys, "describe-effect", "--effect", "overdrive")
    assert code == 2
    assert summary["status"] == "error" and summary["error"] == "InvalidSetting"
