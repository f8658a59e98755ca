use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn relprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relprune")).args(args).output().expect("spawn relprune")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL: &[&str] = &["--samples-per-class", "60", "--ref-per-class", "10", "--eval-per-class", "20", "--epochs", "8"];

fn train_with(dir: &Path, seed: &str, channels: &str) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--seed", seed, "--out", out, "--conv-channels", channels];
    args.extend_from_slice(SMALL);
    relprune(&args)
}

fn train(dir: &Path, seed: &str) -> Output {
    train_with(dir, seed, "6,8")
}

fn prune(model_dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let p = |n: &str| model_dir.join(n).to_str().unwrap().to_string();
    let (m, r, e) = (p("model"), p("ref"), p("eval"));
    let mut args = vec!["prune", "--model", &m, "--refs", &r, "--eval", &e, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    relprune(&args)
}

fn rates(csv: &Path) -> Vec<String> {
    fs::read_to_string(csv).unwrap().lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
}

#[test]
fn train_writes_model_and_splits_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&train(&a, "3")), 0);
    assert_eq!(code(&train(&b, "3")), 0);
    for name in ["model.manifest", "model.blob", "train.blob", "ref.labels", "eval.manifest"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between identical runs");
    }
}

#[test]
fn prune_writes_full_dpx_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m");
    assert_eq!(code(&train_with(&m, "0", "8,16")), 0);
    let out = tmp.path().join("p");
    let res = prune(&m, &out, &["--strategy", "dpx"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = out.join("trajectory.csv");
    let header = fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "strategy,seed,rate,overall_acc,harmonic_mean,acc_class_0,acc_class_1,wall_time_s");
    let r = rates(&csv);
    assert_eq!(r.len(), 19);
    assert_eq!(r[0], "0.05");
    assert_eq!(r[18], "0.95");
    assert!(out.join("pruned.manifest").exists());
}

#[test]
fn sd_dpx_with_both_toggles_off_follows_dpx_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m");
    assert_eq!(code(&train(&m, "1")), 0);
    let flags = ["--pmax", "0.5"];
    let d = tmp.path().join("d");
    let s = tmp.path().join("s");
    assert_eq!(code(&prune(&m, &d, &[&["--strategy", "dpx"][..], &flags].concat())), 0);
    let off = [&["--strategy", "sd-dpx", "--no-rate-change", "--no-order-change"][..], &flags].concat();
    assert_eq!(code(&prune(&m, &s, &off)), 0);
    let csv = |dir: &Path| {
        fs::read_to_string(dir.join("trajectory.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(2).take(5).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(csv(&d), csv(&s));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let res = prune(&missing, &tmp.path().join("o"), &[]);
    assert_eq!(code(&res), 2);
    assert_eq!(code(&relprune(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&relprune(&["frobnicate"])), 1);
    assert_eq!(code(&relprune(&["train", "--classes", "0", "--out", tmp.path().to_str().unwrap()])), 1);
    assert_eq!(code(&relprune(&["prune", "--model", "m", "--refs", "r", "--eval", "e", "--strategy", "nope"])), 1);
    assert_eq!(code(&relprune(&["--help"])), 0);
    assert_eq!(code(&relprune(&["--version"])), 0);

    // garbage where a model manifest should be
    let bad = tmp.path().join("bad");
    fs::write(bad.with_extension("manifest"), "not a manifest\n").unwrap();
    fs::write(bad.with_extension("blob"), b"").unwrap();
    let b = bad.to_str().unwrap();
    assert_eq!(code(&relprune(&["prune", "--model", b, "--refs", b, "--eval", b])), 2);
}

#[test]
fn pmax_above_one_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m");
    assert_eq!(code(&train(&m, "0")), 0);
    assert_eq!(code(&prune(&m, &tmp.path().join("p"), &["--pmax", "1.5"])), 1);
    assert_eq!(code(&prune(&m, &tmp.path().join("p"), &["--refs-per-class", "0"])), 1);
}

#[test]
fn sweep_writes_one_file_per_value_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let mut args = vec![
        "sweep", "--vary", "refs", "--values", "2,5", "--seeds", "0..1", "--strategies", "px,dpx", "--pmax", "0.3",
        "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--conv-channels", "6,8"]);
    let res = relprune(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        ["aggregate.csv", "refs-2-seed0.csv", "refs-2-seed1.csv", "refs-5-seed0.csv", "refs-5-seed1.csv", "summary.csv"]
    );
    // two strategies times six rates
    assert_eq!(rates(&out.join("refs-5-seed1.csv")).len(), 12);
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(agg.lines().next().unwrap().starts_with("refs,"));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 5);

    let bad = relprune(&["sweep", "--vary", "refs", "--values", "99", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn report_computes_auc_and_rejects_mixed_class_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    fs::write(
        &a,
        "strategy,seed,rate,overall_acc,harmonic_mean,acc_class_0,acc_class_1,wall_time_s\n\
         px,0,0.5,1,1,1,1,0.1\n\
         px,0,1,1,0,1,0,0.2\n",
    )
    .unwrap();
    let out = tmp.path().join("r");
    let res = relprune(&["report", "--inputs", a.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let row = cmp.lines().nth(1).unwrap();
    // mean of the lowest class accuracy over the two states
    assert!(row.starts_with("px,1,0.5,"), "{row}");
    assert!(out.join("curves.csv").exists());

    let b = tmp.path().join("b.csv");
    fs::write(
        &b,
        "strategy,seed,rate,overall_acc,harmonic_mean,acc_class_0,acc_class_1,acc_class_2,wall_time_s\n\
         px,1,0.5,1,1,1,1,1,0.1\n",
    )
    .unwrap();
    let res = relprune(&["report", "--inputs", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_ne!(code(&res), 0);
}
