#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use soce_core::soup::save_checkpoint;
use soce_core::{DType, Tensor, TensorMap};

pub const SOCE: &str = env!("CARGO_BIN_EXE_soce");

/// Two Gaussian categories with targets (1,0) and (0,1), sigma 1.
const LANDSCAPE: &str = r#"{"dimension": 2, "categories": [
    {"id": "A", "target": [1, 0], "width": 1},
    {"id": "B", "target": [0, 1], "width": 1}]}"#;

pub fn two_candidate_config() -> String {
    format!(r#"{{"landscape": {LANDSCAPE}, "models": {{"M1": [1, 0], "M2": [0, 1]}}}}"#)
}

/// Adds a weak third candidate far from both targets.
pub fn three_candidate_config() -> String {
    format!(r#"{{"landscape": {LANDSCAPE}, "models": {{"M1": [1, 0], "M2": [0, 1], "M3": [3, 3]}}}}"#)
}

/// Categories A and B anticorrelated, C uncorrelated with both.
pub const LEADERBOARD: &str = "model,A,B,C\nM1,90,10,50\nM2,10,90,50\nM3,50,50,90\n";

pub const HAND_GAME: &str = r#"{"players": ["A", "B"], "coalitions": [
    {"members": ["A"], "value": 1},
    {"members": ["B"], "value": 2},
    {"members": ["A", "B"], "value": 4}]}"#;

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        f.write("syn2.json", &two_candidate_config());
        f.write("syn3.json", &three_candidate_config());
        f.write("scores.csv", LEADERBOARD);
        f.write("game.json", HAND_GAME);
        fs::create_dir(f.path("ckpt")).unwrap();
        for (id, scale) in [("M1", 1.0), ("M2", 2.0), ("M3", 4.0)] {
            f.checkpoint(&format!("ckpt/{id}.safetensors"), scale, &[2, 3]);
        }
        f.write(
            "scorer.sh",
            // Deterministic content-derived scores from the checkpoint's CRC.
            r#"#!/bin/sh
[ "$1" = --checkpoint ] || exit 2
c=$(cksum < "$2" | cut -d' ' -f1)
echo "{\"scores\": {\"A\": $((c % 100)), \"B\": $((c / 100 % 100)), \"C\": $((c / 10000 % 100))}}"
"#,
        );
        f.write("failing.sh", "#!/bin/sh\necho 'scorer crashed' >&2\nexit 1\n");
        for s in ["scorer.sh", "failing.sh"] {
            make_executable(&f.path(s));
        }
        f
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    /// Two f32 tensors, `embed` of `shape` and a bias of length 3, scaled by `scale`.
    pub fn checkpoint(&self, name: &str, scale: f64, shape: &[usize]) -> PathBuf {
        let n: usize = shape.iter().product();
        let embed: Vec<f64> = (0..n).map(|i| scale * (i as f64 + 1.0) / 8.0).collect();
        let mut m = TensorMap::new();
        m.insert("embed", Tensor::from_f64(DType::F32, shape.to_vec(), &embed).unwrap());
        m.insert("bias", Tensor::from_f64(DType::F32, vec![3], &[scale, -scale, 0.5 * scale]).unwrap());
        let p = self.path(name);
        save_checkpoint(&m, &p).unwrap();
        p
    }

    pub fn soce(&self, args: &[&str]) -> Output {
        Command::new(SOCE)
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .expect("soce runs")
    }
}

fn make_executable(p: &Path) {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(p, fs::Permissions::from_mode(0o755)).unwrap();
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", stdout(o)))
}
