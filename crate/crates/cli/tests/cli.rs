use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moladapt::checkpoint::{encoder_from_str, encoder_to_string, model_to_string};
use moladapt::config::RunConfig;
use moladapt::mol::{serialize_mgf, Dataset, MolecularGraph, TaskKind};
use moladapt::synth::{joint_label_corpus, property_corpus, six_atom_molecule};
use moladapt::trainer::{channel_widths, AdaptedModel, Variant};
use tempfile::TempDir;

const SMALL: &str = r#"
[encoder]
hidden = 8
layers = 2
pretrain_epochs = 2
pretrain_batch_size = 8

[knowledge]
channels = ["bond_type"]

[adapt]
cond_hidden = 4

[train]
epochs = 3
lr = 0.01

[eval]
m = 3
n_tasks = 2
seeds = [0, 1]
n_train = 20
n_val = 5
"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        f.write("small.toml", SMALL);
        f.write("class.mgf", &serialize_mgf(&joint_label_corpus(40, 1)));
        f.write("reg.mgf", &serialize_mgf(&property_corpus(40, 2)));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_moladapt"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn pretrain(&self, out: &str) -> Output {
        self.run(&["pretrain", "--config", "small.toml", "--data", "class.mgf", "--out", out])
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn pretrain_writes_reloadable_deterministic_checkpoint() {
    let f = Fixture::new();
    let o = f.pretrain("a/enc.params");
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(f.path("a/enc.params"));
    let enc = encoder_from_str(&text).unwrap();
    assert_eq!(encoder_to_string(&enc).unwrap(), text);
    assert!(f.path("a/pretrain_log.csv").exists());
    assert!(f.path("a/resolved_config.toml").exists());
    f.pretrain("b/enc.params");
    assert_eq!(read(f.path("b/enc.params")), text);
    assert_eq!(read(f.path("b/pretrain_log.csv")), read(f.path("a/pretrain_log.csv")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let f = Fixture::new();
    f.pretrain("a/enc.params");
    let echoed = RunConfig::load(f.path("a/resolved_config.toml")).unwrap();
    assert_eq!(echoed, RunConfig::from_toml(SMALL).unwrap());
    let o = f.run(&["pretrain", "--config", "a/resolved_config.toml", "--data", "class.mgf", "--out", "c/enc.params"]);
    assert!(o.status.success());
    assert_eq!(read(f.path("c/enc.params")), read(f.path("a/enc.params")));
}

#[test]
fn seed_flag_overrides_config() {
    let f = Fixture::new();
    f.pretrain("a/enc.params");
    let o = f.run(&["pretrain", "--config", "small.toml", "--data", "class.mgf", "--out", "s/enc.params", "--seed", "9"]);
    assert!(o.status.success());
    assert_ne!(read(f.path("s/enc.params")), read(f.path("a/enc.params")));
    assert_eq!(RunConfig::load(f.path("s/resolved_config.toml")).unwrap().encoder.seed, 9);
}

#[test]
fn missing_data_file_exits_1_naming_the_path() {
    let f = Fixture::new();
    let o = f.run(&["pretrain", "--data", "nowhere.mgf", "--out", "x.params"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.mgf"));
}

#[test]
fn bad_config_and_bad_flags_exit_1() {
    let f = Fixture::new();
    f.write("bad.toml", "[train]\nepoch = 3\n");
    let o = f.run(&["pretrain", "--config", "bad.toml", "--data", "class.mgf", "--out", "x.params"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(f.run(&["pretrain", "--bogus"]).status.code(), Some(1));
    f.write("broken.mgf", "atom 0 C\nbond 0 3 1\n---\n");
    let o = f.run(&["pretrain", "--data", "broken.mgf", "--out", "x.params"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn adapt_logs_losses_and_weights() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    let o = f.run(&["adapt", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = read(f.path("run/train_log.csv"));
    assert_eq!(log.lines().next().unwrap(), "step,L_task,L_align,w_task,w_align,total");
    // 6 training graphs, batch 32, 3 epochs.
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(f.path("run/model.params").exists());
    assert!(f.path("run/resolved_config.toml").exists());
    let out = stdout(&o);
    assert!(out.contains("trainable_params"));
    assert!(out.contains("frozen_params"));
}

#[test]
fn adapt_with_zero_epochs_saves_the_initialization() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    f.write("zero.toml", &SMALL.replace("epochs = 3", "epochs = 0"));
    let o = f.run(&["adapt", "--config", "zero.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::from_toml(&read(f.path("zero.toml"))).unwrap();
    let enc = encoder_from_str(&read(f.path("enc.params"))).unwrap();
    let spec = cfg.adapt_spec(Variant::FULL);
    let init = AdaptedModel::initialize(&enc, TaskKind::Classification, &spec, &channel_widths(&spec.knowledge)).unwrap();
    assert_eq!(read(f.path("run/model.params")), model_to_string(&init).unwrap());
}

#[test]
fn geometry_on_2d_only_data_exits_1() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    let mut flat = joint_label_corpus(40, 1);
    for g in &mut flat.graphs {
        strip_positions(g);
    }
    f.write("flat.mgf", &serialize_mgf(&flat));
    f.write("geo.toml", &SMALL.replace("channels = [\"bond_type\"]", "channels = [\"geometry\"]"));
    let o = f.run(&["adapt", "--config", "geo.toml", "--data", "flat.mgf", "--checkpoint", "enc.params", "--out", "run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("geometry"), "{}", stderr(&o));
}

fn strip_positions(g: &mut MolecularGraph) {
    for a in &mut g.atoms {
        a.position = None;
        a.energy = None;
    }
}

#[test]
fn eval_routes_metric_and_is_deterministic() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    let args = |data: &'static str, out: &'static str| {
        ["eval", "--config", "small.toml", "--data", data, "--checkpoint", "enc.params", "--out", out]
    };
    let o = f.run(&args("class.mgf", "e1/results.csv"));
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[0], "roc_auc");
    assert_eq!(fields[3], "4");
    let o2 = f.run(&args("class.mgf", "e2/results.csv"));
    assert_eq!(stdout(&o2), line);
    assert_eq!(read(f.path("e1/results.csv")), read(f.path("e2/results.csv")));
    assert!(f.path("e1/resolved_config.toml").exists());

    let o = f.run(&args("reg.mgf", "e3/results.csv"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("rmse "));
}

#[test]
fn eval_accepts_an_adapted_model() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    f.run(&["adapt", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "run"]);
    let o = f.run(&["eval", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "run/model.params", "--out", "e.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let from_encoder = f.run(&["eval", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "f.csv"]);
    assert_eq!(read(f.path("e.csv")), read(f.path("f.csv")));
    assert_eq!(stdout(&o), stdout(&from_encoder));
}

#[test]
fn ablate_groups_and_determinism() {
    let f = Fixture::new();
    f.pretrain("enc.params");
    let o = f.run(&["ablate", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "a.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let groups: Vec<String> = stdout(&o).lines().map(|l| l.split(' ').next().unwrap().to_string()).collect();
    assert_eq!(groups, ["variant1", "variant2", "variant3", "variant4", "variant5", "full"]);
    assert_eq!(read(f.path("a.csv")).lines().count(), 1 + 6 * 4);
    f.run(&["ablate", "--config", "small.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "b.csv"]);
    assert_eq!(read(f.path("a.csv")), read(f.path("b.csv")));

    f.write("one.toml", &format!("{SMALL}variants = [\"variant3\"]\n"));
    let o = f.run(&["ablate", "--config", "one.toml", "--data", "class.mgf", "--checkpoint", "enc.params", "--out", "c.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("variant3 roc_auc"));
}

fn gradcheck_fixture(f: &Fixture) {
    let ds = Dataset::new(vec![six_atom_molecule()], TaskKind::Classification).unwrap();
    f.write("hexa.mgf", &serialize_mgf(&ds));
    f.write("gc.toml", "[encoder]\nhidden = 8\n[adapt]\ncond_hidden = 4\n");
}

fn max_rel_error(out: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix("max_rel_error "))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn gradcheck_reports_eps_and_exit_matches_threshold() {
    let f = Fixture::new();
    gradcheck_fixture(&f);
    let o = f.run(&["gradcheck", "--config", "gc.toml", "--data", "hexa.mgf", "--eps", "2e-5"]);
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().contains("eps=2e-5"), "{out}");
    let err = max_rel_error(&out);
    assert_eq!(o.status.code(), Some(if err < 1e-4 { 0 } else { 2 }), "{out}");
}

#[test]
fn gradcheck_catches_a_corrupted_backward_rule() {
    let f = Fixture::new();
    gradcheck_fixture(&f);
    let o = f.run(&["gradcheck", "--config", "gc.toml", "--data", "hexa.mgf", "--fault-sigmoid-scale", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(max_rel_error(&stdout(&o)) > 0.1);
}

#[test]
fn gradcheck_on_empty_data_exits_1() {
    let f = Fixture::new();
    f.write("empty.mgf", "");
    let o = f.run(&["gradcheck", "--data", "empty.mgf"]);
    assert_eq!(o.status.code(), Some(1));
}
