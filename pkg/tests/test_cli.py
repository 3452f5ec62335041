import numpy as np
import pytest

from mksnet.cli import main
from mksnet.serialize import load_tensor, load_weights

TINY_CONFIG = """
[model]
depths = 1
channels = 8
branches = 2
reduction = 2
patch_kernel = 4
patch_stride = 4
variant = sa_ca

[train]
epochs = 2
batch = 4
image_size = 16
train_samples = 16
val_samples = 8
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_CONFIG)
    return str(p)


class TestEvalAp:
    def test_hand_fixture(self, tmp_path, capsys):
        f = tmp_path / "preds.txt"
        f.write_text("# score label\n0.9 1\n0.8 0\n0.7 1\n0.6 1\n0.5 0\n0.4 0\n")
        assert main(["eval-ap", str(f)]) == 0
        assert capsys.readouterr().out.strip() == "0.833333"

    def test_positives_override(self, tmp_path, capsys):
        f = tmp_path / "preds.txt"
        f.write_text("positives=2\n0.9 1\n")
        assert main(["eval-ap", str(f)]) == 0
        assert capsys.readouterr().out.strip() == "0.500000"

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["eval-ap", str(tmp_path / "nope.txt")]) == 2


class TestGradcheck:
    def test_single_op_ok(self, capsys):
        assert main(["gradcheck", "relu"]) == 0
        assert "ok" in capsys.readouterr().out

    def test_negative_control_fails_with_exit_1(self, capsys):
        assert main(["gradcheck", "_broken"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_scope_exit_2(self, capsys):
        assert main(["gradcheck", "definitely-not-a-unit"]) == 2
        assert "unknown" in capsys.readouterr().err

    def test_missing_subcommand_exit_2(self, capsys):
        assert main([]) == 2


class TestConfigErrors:
    def test_malformed_config_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text("[train]\nepochs = banana\n")
        assert main(["train", "--config", str(p)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_variant_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text("[model]\nvariant = resnet\n")
        assert main(["bench", "--config", str(p)]) == 2

    def test_indivisible_image_size_exit_2(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text(TINY_CONFIG.replace("image_size = 16", "image_size = 18"))
        assert main(["train", "--config", str(p)]) == 2

    def test_missing_config_file_exit_2(self):
        assert main(["train", "--config", "/no/such/file.ini"]) == 2


class TestTrainCommand:
    def test_writes_artifacts_and_is_reproducible(self, tiny_config, tmp_path,
                                                  capsys):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", tiny_config, "--seed", "3",
                     "--out", str(out1)]) == 0
        assert main(["train", "--config", tiny_config, "--seed", "3",
                     "--out", str(out2)]) == 0
        csv1 = (out1 / "metrics.csv").read_bytes()
        assert csv1 == (out2 / "metrics.csv").read_bytes()
        assert csv1.splitlines()[0] == b"epoch,loss,ap"
        assert len(csv1.splitlines()) == 3  # header + 2 epochs
        w1 = (out1 / "weights.mksw").read_bytes()
        assert w1 == (out2 / "weights.mksw").read_bytes()
        assert "final AP" in capsys.readouterr().out

    def test_seed_changes_metrics(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        main(["train", "--config", tiny_config, "--seed", "0", "--out", str(out1)])
        main(["train", "--config", tiny_config, "--seed", "1", "--out", str(out2)])
        assert (out1 / "metrics.csv").read_bytes() != \
               (out2 / "metrics.csv").read_bytes()


class TestExport:
    def test_weights_roundtrip(self, tiny_config, tmp_path):
        path = tmp_path / "w.mksw"
        assert main(["export", "weights", str(path), "--config", tiny_config,
                     "--seed", "0"]) == 0
        tensors = load_weights(path)
        assert any(name.endswith(".running_mean") for name in tensors)
        assert list(tensors) == sorted(tensors)

    def test_tensor_dump(self, tiny_config, tmp_path):
        wpath = tmp_path / "w.mksw"
        main(["export", "weights", str(wpath), "--config", tiny_config,
              "--seed", "0"])
        tensors = load_weights(wpath)
        name = sorted(tensors)[0]
        tpath = tmp_path / "t.mkst"
        assert main(["export", "tensor", str(tpath), "--name", name,
                     "--config", tiny_config, "--seed", "0"]) == 0
        np.testing.assert_array_equal(load_tensor(tpath), tensors[name])

    def test_tensor_requires_name(self, tiny_config, tmp_path, capsys):
        assert main(["export", "tensor", str(tmp_path / "t.mkst"),
                     "--config", tiny_config]) == 2
        assert "--name" in capsys.readouterr().err

    def test_unknown_tensor_name_exit_2(self, tiny_config, tmp_path):
        assert main(["export", "tensor", str(tmp_path / "t.mkst"),
                     "--name", "nope", "--config", tiny_config]) == 2


class TestErfCommand:
    def test_writes_pgm_and_csv(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "erf"
        assert main(["erf", "--config", tiny_config, "--seed", "0",
                     "--size", "16", "--samples", "2", "--out", str(out)]) == 0
        pgm = (out / "erf.pgm").read_bytes()
        assert pgm.startswith(b"P5\n16 16\n255\n")
        assert len(pgm.splitlines()[3:]) >= 1
        assert "support width" in capsys.readouterr().out
        rows = (out / "erf.csv").read_text().splitlines()
        assert len(rows) == 17  # header + 16 rows
