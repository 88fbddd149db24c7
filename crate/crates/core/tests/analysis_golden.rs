use std::path::PathBuf;

use musclerun_core::analysis::*;
use musclerun_core::trajectory::TrajectoryLog;
use musclerun_core::Error;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden_log() -> TrajectoryLog {
    TrajectoryLog::load(&data("golden_running_log.csv")).unwrap()
}

fn labels(foot: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(data("golden_running_strikes.csv")).unwrap();
    r.records().map(|x| x.unwrap()).filter(|x| &x[0] == foot).map(|x| x[1].parse().unwrap()).collect()
}

fn max_diff(a: &[Vec<f64>; 3], b: &[Vec<f64>; 3]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

#[test]
fn strikes_match_labels() {
    let log = golden_log();
    for (foot, name) in [(Foot::Right, "right"), (Foot::Left, "left")] {
        let found = detect_foot_strikes(&log, foot);
        let want = labels(name);
        assert_eq!(found.len(), want.len(), "{name}");
        for (f, w) in found.iter().zip(&want) {
            assert!((f - w).abs() <= 0.01, "{name}: detected {f}, labeled {w}");
        }
    }
}

#[test]
fn representative_cycle_matches_reference() {
    let log = golden_log();
    for (foot, file) in [(Foot::Right, "golden_running_cycle_right.csv"), (Foot::Left, "golden_running_cycle_left.csv")]
    {
        let rep = segment_and_average(&log, foot, DEFAULT_WINDOW).unwrap();
        let reference = ExperimentalBand::load(&data(file)).unwrap();
        assert_eq!(rep.cycles, 6);
        assert!(max_diff(&rep.mean, &reference.mean) <= 1e-9, "{file} mean");
        assert!(max_diff(&rep.sd, &reference.sd) <= 1e-9, "{file} sd");
        // Round trip through the output table.
        let again = ExperimentalBand::parse(&rep.to_csv()).unwrap();
        assert_eq!(again.mean, rep.mean);
    }
}

#[test]
fn only_the_final_window_counts() {
    let log = golden_log();
    let rep = segment_and_average(&log, Foot::Right, DEFAULT_WINDOW).unwrap();
    let mut scrambled = log.clone();
    for r in scrambled.records.iter_mut().filter(|r| r.time < 4.5) {
        r.q.iter_mut().for_each(|v| *v = 1.0);
    }
    assert_eq!(segment_and_average(&scrambled, Foot::Right, DEFAULT_WINDOW).unwrap(), rep);
    let whole = segment_and_average(&log, Foot::Right, 10.0).unwrap();
    assert!(whole.cycles > rep.cycles);
}

#[test]
fn too_few_strikes_is_an_error() {
    let mut log = golden_log();
    log.records.truncate(60);
    assert!(matches!(segment_and_average(&log, Foot::Right, DEFAULT_WINDOW), Err(Error::AnalysisInsufficient(_))));
    log.records.clear();
    assert!(matches!(segment_and_average(&log, Foot::Left, DEFAULT_WINDOW), Err(Error::AnalysisInsufficient(_))));
}

#[test]
fn shifting_time_changes_nothing() {
    let log = golden_log();
    let base = segment_and_average(&log, Foot::Left, DEFAULT_WINDOW).unwrap();
    let mut shifted = log.clone();
    shifted.records.iter_mut().for_each(|r| r.time += 37.25);
    let moved = segment_and_average(&shifted, Foot::Left, DEFAULT_WINDOW).unwrap();
    assert_eq!(moved.cycles, base.cycles);
    assert!(max_diff(&moved.mean, &base.mean) <= 1e-9);
    assert!(max_diff(&moved.sd, &base.sd) <= 1e-9);
}

#[test]
fn periodic_gait_has_no_spread() {
    // 74 samples per cycle so every cycle sees the same samples.
    let mut log = golden_log();
    let period = 74;
    let bw = log.meta.body_weight;
    for (i, r) in log.records.iter_mut().enumerate() {
        let phase = (i % period) as f64 / period as f64;
        let w = std::f64::consts::TAU * phase;
        r.q[3] = 0.4 * w.sin();
        r.q[4] = -0.6 * (1.0 - w.cos());
        r.q[5] = 0.2 * (2.0 * w).sin();
        r.grf[0] = if phase < 0.4 { bw * (std::f64::consts::PI * phase / 0.4).sin() + 0.1 * bw } else { 0.0 };
    }
    let rep = segment_and_average(&log, Foot::Right, DEFAULT_WINDOW).unwrap();
    assert!(rep.cycles >= 5);
    for sd in &rep.sd {
        assert!(sd.iter().all(|&s| s < 1e-9), "{sd:?}");
    }
    // Knee is exported flexion positive.
    assert!(rep.mean[1].iter().all(|&k| k >= 0.0));
    assert!((rep.mean[0][25] - 0.4f64.to_degrees()).abs() < 0.5);
}
