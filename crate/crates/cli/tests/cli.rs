use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const COSINE: &str = r#"
[problem]
label = "single_integrator_cos"

[grid]
z_lo = [-2.0]
z_hi = [2.0]
z_per_axis = 81
y_lo = [-1.0]
y_hi = [1.0]
y_per_axis = 5

[solve]
z = [1.0]
"#;

const EXAMPLE21: &str = r#"
[problem]
label = "example21"
"#;

const ZERO: &str = r#"
[problem]
label = "single_integrator"

[terminal]
family = "zero"

[grid]
y_lo = [-1.0]
y_hi = [1.0]
y_per_axis = 5
atlas_lo = [-2.0]
atlas_hi = [2.0]
atlas_per_axis = 21
"#;

const LQ: &str = r#"
[problem]
label = "planar_lq"
params = { degenerate = 1.0 }

[grid]
z_lo = [-1.0]
z_hi = [1.0]
z_per_axis = 7

[run]
seed = 11
"#;

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Run { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn pmp(&self, args: &[&str]) -> Output {
        self.pmp_into(&self.out(), args)
    }

    fn pmp_into(&self, out: &Path, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pmp"))
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(out)
            .args(args)
            .output()
            .unwrap()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Data rows of a CSV: skips the hash line and the header.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn solve_cosine_matches_the_closed_form() {
    let run = Run::new(COSINE);
    assert_eq!(code(&run.pmp(&["solve"])), 0);
    let arc = run.json("arc.json");
    assert!(arc["result"]["tau"].is_null());
    let x0 = 1.0 - 2.0 * 1.0_f64.sin();
    let text = run.read("arc.csv");
    assert!(text.lines().nth(1).unwrap().starts_with("t,x1,"));
    let first = &rows(&text)[0];
    assert_eq!(first[0], "0.0");
    let at_zero: f64 = first[1].parse().unwrap();
    assert!((at_zero - x0).abs() < 1e-6, "{at_zero} vs {x0}");
}

#[test]
fn solve_reports_escape_with_exit_three() {
    let run = Run::new(EXAMPLE21);
    let o = run.pmp(&["solve", "--z", "-1"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let tau = run.json("arc.json")["result"]["tau"].as_f64().unwrap();
    assert!(tau > 0.9 && tau < 1.1, "tau = {tau}");
}

#[test]
fn zero_terminal_cost_gives_flat_arcs_and_zero_value() {
    let run = Run::new(ZERO);
    assert_eq!(code(&run.pmp(&["solve", "--z", "0.5"])), 0);
    let text = run.read("arc.csv");
    let x_col = text.lines().nth(1).unwrap().split(',').position(|h| h == "x1").unwrap();
    for row in rows(&text) {
        let x: f64 = row[x_col].parse().unwrap();
        assert!((x - 0.5).abs() < 1e-12);
    }
    assert_eq!(code(&run.pmp(&["value"])), 0);
    let text = run.read("value.csv");
    let v_col = text.lines().nth(1).unwrap().split(',').position(|h| h == "V").unwrap();
    for row in rows(&text) {
        assert!(row[v_col].parse::<f64>().unwrap().abs() < 1e-9);
    }
}

#[test]
fn figure1_writes_an_indexed_trajectory_field() {
    let run = Run::new(EXAMPLE21);
    assert_eq!(code(&run.pmp(&["figure1"])), 0);
    let index = rows(&run.read("figure1/index.csv"));
    assert_eq!(index.len(), 17);
    assert!(index.iter().any(|r| r[2] == "escaped"));
    let minus_one = index.iter().find(|r| r[1] == "-1.0").unwrap();
    assert_eq!(minus_one[2], "escaped");
    assert!(run.out().join("figure1").join(&minus_one[5]).exists());
}

#[test]
fn conjugate_on_cosine_finds_both_points() {
    let run = Run::new(COSINE);
    assert_eq!(code(&run.pmp(&["conjugate"])), 0);
    let locus = rows(&run.read("locus.csv"));
    assert_eq!(locus.len(), 2);
    let third = std::f64::consts::FRAC_PI_3;
    let mut zs: Vec<f64> = locus.iter().map(|r| r[0].parse().unwrap()).collect();
    zs.sort_by(f64::total_cmp);
    assert!((zs[0] + third).abs() < 1e-6 && (zs[1] - third).abs() < 1e-6, "{zs:?}");
    let j = run.json("conjugate.json");
    assert_eq!(j["tool"], "pmp");
    assert_eq!(j["result"]["note"], "relative to discovered extremal set");
}

#[test]
fn reach_at_the_origin_is_multiple() {
    let run = Run::new(COSINE);
    assert_eq!(code(&run.pmp(&["reach", "--y", "0"])), 0);
    let sol = &run.json("reach.json")["result"]["solution"];
    assert_eq!(sol["multiplicity"], true);
    assert_eq!(sol["minimizers"].as_array().unwrap().len(), 2);
    let minimizer_rows: Vec<_> = rows(&run.read("reach.csv"))
        .into_iter()
        .filter(|r| r.last().unwrap() == "1")
        .collect();
    for r in minimizer_rows {
        let w: f64 = r[3].parse().unwrap();
        assert!((w - 0.5792021).abs() < 1e-6);
    }
}

#[test]
fn bounds_report_is_written() {
    let run = Run::new(COSINE);
    assert_eq!(code(&run.pmp(&["bounds"])), 0);
    let reports = run.json("bounds.json")["result"]["reports"].as_array().unwrap().len();
    assert_eq!(reports, 4);
}

#[test]
fn perturb_makes_the_degenerate_problem_generic() {
    let run = Run::new(LQ);
    let o = run.pmp(&["perturb"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = run.json("transversality.json");
    let r = &t["result"];
    assert_eq!(r["status"], "generic");
    assert!(r["draw"].as_u64().unwrap() >= 1);
    assert!(r["norm_bound"].as_f64().unwrap() <= r["budget"].as_f64().unwrap());
    for c in r["candidates"].as_array().unwrap() {
        assert_eq!(c["rank"], c["expected"]);
    }
}

#[test]
fn zero_scale_exhausts_the_budget() {
    let run = Run::new(&format!("{LQ}\n[perturb]\nscale = 0.0\nmax_draws = 2\n"));
    assert_eq!(code(&run.pmp(&["perturb"])), 4);
    assert_eq!(run.json("transversality.json")["result"]["status"], "budget_exhausted");
}

#[test]
fn configuration_errors_exit_with_two() {
    let bad_label = Run::new("[problem]\nlabel = \"nope\"\n");
    assert_eq!(code(&bad_label.pmp(&["solve"])), 2);
    let typo = Run::new(&format!("{COSINE}\n[run]\nsed = 3\n"));
    assert_eq!(code(&typo.pmp(&["solve"])), 2);
    let wrong_dim = Run::new(COSINE);
    assert_eq!(code(&wrong_dim.pmp(&["solve", "--z", "1,2"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_pmp"))
        .args(["solve"])
        .env("PMP_RANK_TOL", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "missing --config");
}

#[test]
fn environment_overrides_are_validated() {
    let run = Run::new(COSINE);
    let o = Command::new(env!("CARGO_BIN_EXE_pmp"))
        .arg("--config")
        .arg(run.dir.path().join("run.toml"))
        .arg("--out")
        .arg(run.out())
        .arg("solve")
        .env("PMP_TIE_TOL", "-1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_tagged_and_independent_of_out_dir_and_threads() {
    let run = Run::new(COSINE);
    let a = run.dir.path().join("a");
    let b = run.dir.path().join("b");
    for cmd in ["conjugate", "reach", "value"] {
        assert_eq!(code(&run.pmp_into(&a, &["--threads", "1", cmd])), 0);
        assert_eq!(code(&run.pmp_into(&b, &["--threads", "8", cmd])), 0);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 7);
    assert_eq!(sa, sb);
    let hash_line = String::from_utf8(sa.iter().find(|(n, _)| n == "locus.csv").unwrap().1.clone()).unwrap();
    let hash = hash_line
        .lines()
        .next()
        .unwrap()
        .strip_prefix("# config_hash: ")
        .unwrap()
        .to_string();
    assert_eq!(hash.len(), 64);
    for (name, bytes) in &sa {
        let text = String::from_utf8_lossy(bytes);
        if name.ends_with(".csv") {
            assert!(text.starts_with(&format!("# config_hash: {hash}\n")), "{name}");
        } else {
            let j: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(j["config_hash"], hash.as_str());
        }
    }
}

#[test]
fn seed_changes_the_hash() {
    let run = Run::new(COSINE);
    let a = run.dir.path().join("a");
    let b = run.dir.path().join("b");
    assert_eq!(code(&run.pmp_into(&a, &["bounds"])), 0);
    assert_eq!(code(&run.pmp_into(&b, &["--seed", "5", "bounds"])), 0);
    let ha = fs::read_to_string(a.join("bounds.json")).unwrap();
    let hb = fs::read_to_string(b.join("bounds.json")).unwrap();
    let get = |s: &str| serde_json::from_str::<Value>(s).unwrap()["config_hash"].clone();
    assert_ne!(get(&ha), get(&hb));
}
