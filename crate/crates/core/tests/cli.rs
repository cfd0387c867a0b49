use std::path::{Path, PathBuf};
use std::process::Command;

use kanmixer::checkpoint;
use kanmixer::cli::{self, AblateOptions};
use kanmixer::data::{synthetic_table, write_csv};
use kanmixer::train::RunReport;
use kanmixer::RunConfig;

const SMALL: &str = "model.lookback=24\nmodel.horizon=8\nmodel.d_model=6\nmodel.n_blocks=1\nmodel.n_scales=2\ntrain.epochs=2\ntrain.patience=1\n";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_csv(&synthetic_table(400, 3, 12.0, 0.005), dir.path().join("series.csv")).unwrap();
        let ws = Self { dir };
        ws.write_config("run.cfg", &format!("# test run\ndataset.path=series.csv\n{SMALL}{extra}"));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kanmixer"))
}

fn run(cmd: &mut Command) -> (bool, String, String) {
    let out = cmd.output().unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn train(ws: &Workspace, out: &Path) -> RunReport {
    let mut sink = Vec::new();
    cli::cmd_train(&ws.path("run.cfg"), out, None, &mut sink).unwrap()
}

#[test]
fn train_binary_writes_artifacts() {
    let ws = Workspace::new("");
    let out = ws.path("out");
    let (ok, stdout, stderr) = run(bin().args(["train", "--config"]).arg(ws.path("run.cfg")).arg("--out").arg(&out));
    assert!(ok, "{stderr}");
    assert!(stdout.contains("test mse="), "{stdout}");
    for f in [cli::CHECKPOINT_FILE, cli::REPORT_FILE, cli::EPOCH_LOG_FILE] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(out.join(cli::REPORT_FILE)).unwrap()).unwrap();
    assert!(report.test_mse().is_finite());
    assert!(RunConfig::from_echo(&report.config).is_ok());
}

#[test]
fn unknown_key_exits_nonzero_naming_it() {
    let ws = Workspace::new("");
    let cfg = ws.write_config("bad.cfg", "dataset.path=series.csv\nmodel.dmodel=8\n");
    let (ok, _, stderr) = run(bin().args(["train", "--config"]).arg(cfg).arg("--out").arg(ws.path("o")));
    assert!(!ok);
    assert!(stderr.contains("model.dmodel"), "{stderr}");
    assert_eq!(stderr.trim().lines().count(), 1);
}

#[test]
fn missing_dataset_exits_nonzero_naming_path() {
    let ws = Workspace::new("");
    let cfg = ws.write_config("missing.cfg", "dataset.path=nowhere.csv\n");
    let (ok, _, stderr) = run(bin().args(["train", "--config"]).arg(cfg).arg("--out").arg(ws.path("o")));
    assert!(!ok);
    assert!(stderr.contains("nowhere.csv"), "{stderr}");
}

#[test]
fn seed_flag_overrides_config() {
    let ws = Workspace::new("");
    let a = cli::cmd_train(&ws.path("run.cfg"), &ws.path("a"), Some(5), &mut Vec::new()).unwrap();
    let b = cli::cmd_train(&ws.path("run.cfg"), &ws.path("b"), Some(6), &mut Vec::new()).unwrap();
    assert_eq!(a.seed, 5);
    assert_eq!(b.seed, 6);
    assert_ne!(a.epochs[0].train_loss, b.epochs[0].train_loss);
}

#[test]
fn eval_reproduces_report_and_split_sizes() {
    let ws = Workspace::new("");
    let out = ws.path("out");
    let report = train(&ws, &out);
    let ckpt = out.join(cli::CHECKPOINT_FILE);
    let mut text = Vec::new();
    let test = cli::cmd_eval(&ckpt, &ws.path("run.cfg"), "test", None, &mut text).unwrap();
    let line = String::from_utf8(text).unwrap();
    assert_eq!(test.mse, report.test_mse());
    assert_eq!(test.mae, report.test_mae());
    assert!(line.contains(&format!("mse={:.4}", report.test_mse())), "{line}");

    let val = cli::cmd_eval(&ckpt, &ws.path("run.cfg"), "val", None, &mut Vec::new()).unwrap();
    // 400 rows at 6:2:2 -> val rows 240..320, test rows 320..400.
    assert_eq!(val.windows, 80 - 24 - 8 + 1);
    assert_eq!(test.windows, 80 - 24 - 8 + 1);

    let (ok, stdout, _) = run(bin()
        .args(["eval", "--config"])
        .arg(ws.path("run.cfg"))
        .arg("--out")
        .arg(&out)
        .args(["--split", "val"]));
    assert!(ok);
    assert!(stdout.starts_with("split=val windows=49 mse="), "{stdout}");

    // 7:1:2 -> val rows 280..320, test rows 320..400.
    let other = ws.write_config("other.cfg", &format!("dataset.path=series.csv\ndataset.family=other\n{SMALL}"));
    let out = ws.path("other");
    cli::cmd_train(&other, &out, None, &mut Vec::new()).unwrap();
    let ckpt = out.join(cli::CHECKPOINT_FILE);
    let val = cli::cmd_eval(&ckpt, &other, "val", None, &mut Vec::new()).unwrap();
    let test = cli::cmd_eval(&ckpt, &other, "test", None, &mut Vec::new()).unwrap();
    assert_eq!((val.windows, test.windows), (40 - 32 + 1, 80 - 32 + 1));
}

#[test]
fn eval_rejects_mismatched_or_truncated_checkpoints() {
    let ws = Workspace::new("");
    let out = ws.path("out");
    train(&ws, &out);
    let ckpt = out.join(cli::CHECKPOINT_FILE);
    let wider = ws.write_config("wider.cfg", &format!("dataset.path=series.csv\n{}", SMALL.replace("d_model=6", "d_model=7")));
    let err = cli::cmd_eval(&ckpt, &wider, "test", None, &mut Vec::new()).unwrap_err().to_string();
    assert!(err.contains("model.d_model"), "{err}");

    let text = std::fs::read_to_string(&ckpt).unwrap();
    let cut = ws.path("cut.ckpt");
    std::fs::write(&cut, &text[..text.len() * 2 / 3]).unwrap();
    let (ok, _, stderr) = run(bin().args(["eval", "--config"]).arg(ws.path("run.cfg")).arg("--checkpoint").arg(&cut));
    assert!(!ok);
    assert!(stderr.contains("line") && stderr.contains("byte offset"), "{stderr}");
}

#[test]
fn checkpoint_file_round_trips_byte_for_byte() {
    let ws = Workspace::new("");
    let out = ws.path("out");
    train(&ws, &out);
    let original = std::fs::read_to_string(out.join(cli::CHECKPOINT_FILE)).unwrap();
    let ck = checkpoint::parse(&original).unwrap();
    let model = ck.build_model().unwrap();
    assert_eq!(checkpoint::to_text(model.store(), &ck.config), original);
    ck.config.validate().unwrap();
}

#[test]
fn ablate_unknown_grid_lists_valid_names() {
    let ws = Workspace::new("");
    let (ok, _, stderr) = run(bin()
        .args(["ablate", "--grid", "width", "--config"])
        .arg(ws.path("run.cfg"))
        .arg("--out")
        .arg(ws.path("ab")));
    assert!(!ok);
    for name in ["depth", "components", "priors", "basis"] {
        assert!(stderr.contains(name), "{stderr}");
    }
}

#[test]
fn ablate_basis_writes_table_and_series() {
    let ws = Workspace::new("");
    let cfg = ws.write_config(
        "ab.cfg",
        "dataset.path=series.csv\nmodel.lookback=24\nmodel.horizon=8\nmodel.d_model=4\nmodel.n_blocks=1\nmodel.n_scales=2\ntrain.epochs=1\ntrain.patience=0\n",
    );
    let opts = AblateOptions {
        workers: 2,
        horizons: vec![4, 8],
        seeds: 1,
        seed: None,
    };
    let table_path = cli::cmd_ablate("basis", &cfg, &ws.path("ab"), &opts, &mut Vec::new()).unwrap();
    let table = std::fs::read_to_string(&table_path).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 5 * 2);
    assert!(rows.iter().any(|r| r.starts_with("MLP,") && r.contains("N/A")));
    let series = std::fs::read_to_string(ws.path("ab").join("basis_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 10);
    assert!(ws.path("ab").join("ablation_basis.json").exists());

    // Worker count does not change results.
    let serial = AblateOptions { workers: 1, ..opts };
    let again = cli::cmd_ablate("basis", &cfg, &ws.path("ab1"), &serial, &mut Vec::new()).unwrap();
    assert_eq!(table, std::fs::read_to_string(again).unwrap());
}

#[test]
fn profile_reports_costs_and_disclaimer() {
    let ws = Workspace::new("");
    let cfg = ws.write_config("p.cfg", "model.horizon=96\n");
    let mut text = Vec::new();
    let kan = cli::cmd_profile(&cfg, None, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert!(text.contains("local hardware"), "{text}");
    assert!(text.contains("params=100224"), "{text}");
    let again = cli::cmd_profile(&cfg, None, &mut Vec::new()).unwrap();
    assert_eq!(kan.cost, again.cost);

    let mlp_cfg = ws.write_config("m.cfg", "model.embed=mlp\nmodel.down=mlp\nmodel.ffn=mlp\nmodel.head=mlp\n");
    let mlp = cli::cmd_profile(&mlp_cfg, None, &mut Vec::new()).unwrap();
    assert!(kan.cost.param_count > mlp.cost.param_count);
    assert!(kan.cost.macs_per_window > mlp.cost.macs_per_window);

    let wide = ws.write_config("w.cfg", "model.d_model=32\n");
    let wide = cli::cmd_profile(&wide, None, &mut Vec::new()).unwrap();
    assert!(wide.cost.param_count > kan.cost.param_count);

    let timed = cli::cmd_profile(&ws.path("run.cfg"), None, &mut Vec::new()).unwrap();
    assert!(timed.epoch_seconds.is_some());
}
