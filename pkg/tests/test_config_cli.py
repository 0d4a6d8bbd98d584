"""Config parsing, CLI commands, artifacts, and exit-code contract."""

import pytest

from waveop.cli import main
from waveop.config import parse_config
from waveop.errors import ConfigError

MINI_CONFIG = """\
[run]
seed = 3
data_dir = {root}/data
checkpoint_dir = {root}/ckpt
report_dir = {root}/reports

[model]
blocks = 2
experts = 2
width = 8
levels = 3
bases = 1,2
gate_hidden = 16,8

[train]
epochs = 2
batch = 8
transfer_epochs = 2

[task heat_a]
label = 0
family = heat
grid = 32
alpha = 0.001
dt = 0.001
record_every = 0.01
frames = 14
n_train = 6
n_test = 3
window = 10
grf_kind = rbf
grf_sigma = 0.1
grf_length = 0.2

[task burgers_b]
label = 1
family = burgers
grid = 32
nu = 0.001
dt = 0.001
record_every = 0.01
frames = 14
n_train = 6
n_test = 3
window = 10
grf_kind = rbf
grf_sigma = 0.1
grf_length = 0.2

[task heat_c]
label = 2
family = heat
grid = 32
alpha = 0.002
dt = 0.001
record_every = 0.01
frames = 14
n_train = 6
n_test = 3
window = 10
grf_kind = rbf
grf_sigma = 0.1
grf_length = 0.2

[ablate]
experts = 2,3
seeds = 1
epochs = 1
transfer_epochs = 1
"""


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(MINI_CONFIG.format(root=tmp_path), encoding="utf-8")
    return str(p)


class TestParsing:
    def test_minimal_config_gets_reference_defaults(self, tmp_path):
        p = tmp_path / "min.cfg"
        p.write_text("[run]\nseed = 1\n", encoding="utf-8")
        cfg = parse_config(str(p))
        md = cfg.model_defaults()
        assert md["blocks"] == 4 and md["experts"] == 10
        assert md["width"] == 64 and md["levels"] == 4
        assert md["bases"] == (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
        td = cfg.train_defaults()
        assert td["lr"] == 1e-3 and td["batch"] == 20

    def test_full_config(self, config_path):
        cfg = parse_config(config_path)
        assert cfg.seed == 3
        assert [t.name for t in cfg.tasks] == ["heat_a", "burgers_b", "heat_c"]
        assert cfg.tasks[1].recipe["family"] == "burgers"

    def test_unknown_key_rejected_by_name(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[model]\nexperts_per_blok = 4\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="experts_per_blok"):
            parse_config(str(p))

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[banana]\nx = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="banana"):
            parse_config(str(p))

    def test_duplicate_label_rejected(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[task a]\nlabel = 0\n[task b]\nlabel = 0\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(str(p))

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[run]\nseed\n", encoding="utf-8")
        with pytest.raises(ConfigError, match=":2"):
            parse_config(str(p))

    def test_config_hash_stable(self, config_path):
        assert parse_config(config_path).config_hash() == \
            parse_config(config_path).config_hash()


class TestCliPipeline:
    def test_full_pipeline_and_determinism(self, config_path, tmp_path):
        base = ["--config", config_path]
        assert main(["generate"] + base) == 0
        # determinism: regeneration is byte-identical
        snap = {}
        data_dir = tmp_path / "data"
        for task in ("heat_a", "burgers_b", "heat_c"):
            for f in ("manifest", "inputs.bin", "outputs.bin", "grid.bin"):
                snap[(task, f)] = (data_dir / task / f).read_bytes()
        assert main(["generate"] + base) == 0
        for key, val in snap.items():
            assert (data_dir / key[0] / key[1]).read_bytes() == val, key

        assert main(["train-foundation", "--n-foundation", "2"] + base) == 0
        ckpt = tmp_path / "ckpt" / "foundation"
        assert (ckpt / "manifest.txt").exists() and (ckpt / "tensors.bin").exists()
        assert (ckpt / "run.log").exists() and (ckpt / "stamp.txt").exists()
        log_lines = (ckpt / "run.log").read_text().strip().splitlines()
        assert len(log_lines) == 2 * 2  # epochs x tasks
        for line in log_lines:
            parts = line.split(",")
            assert len(parts) == 6  # epoch,phase,task,loss,lr,wall_ms

        assert main(["transfer", "--task", "heat_c"] + base) == 0
        after = tmp_path / "ckpt" / "after-heat_c"
        assert (after / "manifest.txt").exists()

        # evaluate from the transferred checkpoint; read-only on checkpoint
        before_bytes = (after / "tensors.bin").read_bytes()
        assert main(["evaluate", "--from", str(after)] + base) == 0
        assert (after / "tensors.bin").read_bytes() == before_bytes
        reports = tmp_path / "reports"
        metrics = (reports / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "task,step,mean_acc,ci95_low,ci95_high"
        assert len(metrics) == 1 + 3 * 4  # header + tasks x horizon
        for line in metrics[1:]:
            _task, _step, mean, lo, hi = line.split(",")
            assert float(lo) <= float(mean) <= float(hi)
            assert float(mean) <= 1.0
        sim = (reports / "similarity.csv").read_text().splitlines()
        assert len(sim) == 4
        assert (reports / "plot_metrics.py").exists()
        assert (reports / "stamp.txt").exists()

        # evaluate twice -> byte-identical CSVs
        m1 = (reports / "metrics.csv").read_bytes()
        assert main(["evaluate", "--from", str(after)] + base) == 0
        assert (reports / "metrics.csv").read_bytes() == m1

    def test_ablate_experts_writes_table(self, config_path, tmp_path):
        base = ["--config", config_path]
        assert main(["generate"] + base) == 0
        assert main(["ablate-experts"] + base) == 0
        rows = (tmp_path / "reports" / "ablation.csv").read_text().splitlines()
        assert rows[0] == "experts,seed,task,rel_l2"
        assert len(rows) == 1 + 2  # two expert counts x one seed
        for line in rows[1:]:
            n_exp, seed, task, err = line.split(",")
            assert int(n_exp) in (2, 3) and float(err) >= 0.0

    def test_transfer_then_restore_is_bit_identical(self, config_path, tmp_path):
        base = ["--config", config_path]
        assert main(["generate"] + base) == 0
        assert main(["train-foundation", "--n-foundation", "2"] + base) == 0
        out1 = tmp_path / "eval1"
        assert main(["evaluate", "--task", "heat_a", "--from",
                     str(tmp_path / "ckpt" / "foundation"), "--out", str(out1)] + base) == 0
        assert main(["transfer", "--task", "heat_c"] + base) == 0
        out2 = tmp_path / "eval2"
        assert main(["evaluate", "--task", "heat_a", "--from",
                     str(tmp_path / "ckpt" / "after-heat_c"), "--out", str(out2)] + base) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


class TestExitCodes:
    def test_config_error_is_exit_1(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("[model]\nbogus_key = 1\n", encoding="utf-8")
        assert main(["generate", "--config", str(p)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error=config")

    def test_missing_dataset_is_exit_1(self, config_path, capsys):
        assert main(["train-foundation", "--config", config_path]) == 1
        assert "error=config" in capsys.readouterr().err

    def test_numerics_error_is_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "unstable.cfg"
        cfg.write_text(f"""\
[run]
seed = 1
data_dir = {tmp_path}/d

[task bad]
label = 0
family = heat
grid = 64
alpha = 1.0
dt = 0.01
record_every = 0.01
frames = 12
n_train = 2
n_test = 1
window = 10
""", encoding="utf-8")
        assert main(["generate", "--config", str(cfg)]) == 2
        assert "error=numerics" in capsys.readouterr().err

    def test_io_error_is_exit_3(self, config_path, tmp_path, capsys):
        missing = str(tmp_path / "no-such-checkpoint")
        assert main(["evaluate", "--from", missing, "--config", config_path]) == 3
        assert "error=io" in capsys.readouterr().err

    def test_seed_env_override(self, config_path, tmp_path, monkeypatch):
        monkeypatch.setenv("WAVEOP_SEED", "99")
        assert main(["generate", "--config", config_path]) == 0
        stamp = (tmp_path / "data" / "stamp.txt").read_text()
        assert "seed = 99" in stamp
