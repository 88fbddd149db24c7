//! Gait-cycle segmentation, representative cycles and band agreement.
//!
//! Angles are exported in degrees with flexion positive: hip and ankle
//! keep the model sign, the knee is negated.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryLog;

/// Strike threshold as a fraction of body weight.
pub const STRIKE_FRACTION: f64 = 0.05;
/// Time a foot must stay unloaded before a new strike counts, s.
pub const REFRACTORY: f64 = 0.050;
/// Trailing part of the log that is analyzed, s.
pub const DEFAULT_WINDOW: f64 = 5.0;
pub const SAMPLES: usize = 101;
pub const JOINTS: [&str; 3] = ["hip", "knee", "ankle"];

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foot {
    Right,
    Left,
}

impl Foot {
    fn side(self) -> usize {
        match self {
            Foot::Right => 0,
            Foot::Left => 1,
        }
    }

    /// Index of the hip coordinate; knee and ankle follow.
    fn first_joint(self) -> usize {
        3 + 3 * self.side()
    }
}

impl std::str::FromStr for Foot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "right" | "r" => Ok(Foot::Right),
            "left" | "l" => Ok(Foot::Left),
            other => Err(Error::InvalidArgument(format!("foot must be left or right, got \"{other}\""))),
        }
    }
}

/// Times where `force` rises to `threshold` after at least
/// [`REFRACTORY`] seconds below it. The strike time is the first loaded sample.
pub fn detect_strikes(times: &[f64], force: &[f64], threshold: f64) -> Vec<f64> {
    let mut strikes = Vec::new();
    let mut below_since: Option<f64> = None;
    for (&t, &f) in times.iter().zip(force) {
        if f < threshold {
            below_since.get_or_insert(t);
        } else if let Some(t0) = below_since.take() {
            if t - t0 >= REFRACTORY - TIME_EPS {
                strikes.push(t);
            }
        }
    }
    strikes
}

pub fn detect_foot_strikes(log: &TrajectoryLog, foot: Foot) -> Vec<f64> {
    let times: Vec<f64> = log.records.iter().map(|r| r.time).collect();
    let force: Vec<f64> = log.records.iter().map(|r| r.grf[foot.side()]).collect();
    detect_strikes(&times, &force, STRIKE_FRACTION * log.meta.body_weight)
}

/// One cycle, each joint resampled to [`SAMPLES`] points.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub start: f64,
    pub end: f64,
    pub angles: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeCycle {
    pub cycles: usize,
    pub mean: [Vec<f64>; 3],
    /// Sample standard deviation; zero for a single cycle.
    pub sd: [Vec<f64>; 3],
}

/// Per-joint band of `mean ± sd` samples, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentalBand {
    pub mean: [Vec<f64>; 3],
    pub sd: [Vec<f64>; 3],
}

pub fn percent_axis() -> Vec<f64> {
    (0..SAMPLES).map(|k| k as f64 * 100.0 / (SAMPLES - 1) as f64).collect()
}

/// Linear interpolation of `(xs, ys)` at `x`; `xs` ascending, `x` inside.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

/// Resamples `ys(ts)` over `[start, end]` at [`SAMPLES`] evenly spaced times.
pub fn resample(ts: &[f64], ys: &[f64], start: f64, end: f64) -> Vec<f64> {
    (0..SAMPLES).map(|k| interpolate(ts, ys, start + (end - start) * k as f64 / (SAMPLES - 1) as f64)).collect()
}

/// Joint angles of `foot`'s leg in export convention, degrees.
pub fn joint_angles(log: &TrajectoryLog, foot: Foot) -> [Vec<f64>; 3] {
    let j = foot.first_joint();
    let series = |k: usize, sign: f64| log.records.iter().map(|r| sign * r.q[j + k].to_degrees()).collect();
    [series(0, 1.0), series(1, -1.0), series(2, 1.0)]
}

pub fn segment(log: &TrajectoryLog, foot: Foot, window: f64) -> Result<Vec<GaitCycle>> {
    let last = log.records.last().ok_or_else(|| Error::AnalysisInsufficient("log is empty".into()))?.time;
    let from = last - window;
    let strikes: Vec<f64> = detect_foot_strikes(log, foot).into_iter().filter(|&t| t >= from - TIME_EPS).collect();
    if strikes.len() < 2 {
        return Err(Error::AnalysisInsufficient(format!("{} strike(s) in the last {window} s, need 2", strikes.len())));
    }
    let ts: Vec<f64> = log.records.iter().map(|r| r.time).collect();
    let angles = joint_angles(log, foot);
    Ok(strikes
        .windows(2)
        .map(|w| GaitCycle { start: w[0], end: w[1], angles: [0, 1, 2].map(|k| resample(&ts, &angles[k], w[0], w[1])) })
        .collect())
}

pub fn average(cycles: &[GaitCycle]) -> RepresentativeCycle {
    let n = cycles.len();
    let stat = |k: usize| {
        let mut mean = vec![0.0; SAMPLES];
        let mut sd = vec![0.0; SAMPLES];
        for i in 0..SAMPLES {
            let m = cycles.iter().map(|c| c.angles[k][i]).sum::<f64>() / n as f64;
            mean[i] = m;
            if n > 1 {
                let ss: f64 = cycles.iter().map(|c| (c.angles[k][i] - m).powi(2)).sum();
                sd[i] = (ss / (n - 1) as f64).sqrt();
            }
        }
        (mean, sd)
    };
    let [(m0, s0), (m1, s1), (m2, s2)] = [0, 1, 2].map(stat);
    RepresentativeCycle { cycles: n, mean: [m0, m1, m2], sd: [s0, s1, s2] }
}

pub fn segment_and_average(log: &TrajectoryLog, foot: Foot, window: f64) -> Result<RepresentativeCycle> {
    Ok(average(&segment(log, foot, window)?))
}

/// Fraction of samples per joint whose mean lies within band mean ± 2 sd.
pub fn band_agreement(rep: &RepresentativeCycle, band: &ExperimentalBand) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let n = rep.mean[k].len();
        if band.mean[k].len() != n || band.sd[k].len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} band has {} samples, cycle has {n}",
                JOINTS[k],
                band.mean[k].len()
            )));
        }
        let inside = (0..n).filter(|&i| (rep.mean[k][i] - band.mean[k][i]).abs() <= 2.0 * band.sd[k][i]).count();
        *slot = inside as f64 / n as f64;
    }
    Ok(out)
}

fn table_header() -> Vec<String> {
    let mut h = vec!["percent".to_string()];
    for j in JOINTS {
        h.push(format!("{j}_mean"));
        h.push(format!("{j}_sd"));
    }
    h
}

fn write_table<W: Write>(out: W, mean: &[Vec<f64>; 3], sd: &[Vec<f64>; 3]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(table_header()).map_err(csv_err)?;
    for (i, p) in percent_axis().into_iter().enumerate() {
        let mut row = vec![format!("{p:?}")];
        for k in 0..3 {
            row.push(format!("{:?}", mean[k][i]));
            row.push(format!("{:?}", sd[k][i]));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

impl RepresentativeCycle {
    /// CSV table: percent, then mean and sd per joint.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_table(out, &self.mean, &self.sd)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

impl ExperimentalBand {
    /// Same column layout as [`RepresentativeCycle::write_csv`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(table_header().iter().map(String::as_str)) {
            return Err(Error::Parse(format!("band header must be {}", table_header().join(","))));
        }
        let mut band = ExperimentalBand { mean: Default::default(), sd: Default::default() };
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            let v = row
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("band row {line}: bad number \"{s}\"")))
                })
                .collect::<Result<Vec<f64>>>()?;
            for k in 0..3 {
                band.mean[k].push(v[1 + 2 * k]);
                band.sd[k].push(v[2 + 2 * k]);
            }
        }
        if band.mean[0].len() != SAMPLES {
            return Err(Error::Parse(format!("band has {} rows, expected {SAMPLES}", band.mean[0].len())));
        }
        Ok(band)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_table(out, &self.mean, &self.sd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_wave(on: f64, off: f64, total: f64) -> (Vec<f64>, Vec<f64>) {
        let dt = 0.01;
        let n = (total / dt).round() as usize;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let period = on + off;
        // Unloaded first, then loaded.
        let f = t.iter().map(|&ti| if (ti + 1e-9) % period >= off { 800.0 } else { 0.0 }).collect();
        (t, f)
    }

    #[test]
    fn zero_force_has_no_strikes() {
        let t: Vec<f64> = (0..500).map(|i| i as f64 * 0.01).collect();
        assert!(detect_strikes(&t, &vec![0.0; 500], 30.0).is_empty());
    }

    #[test]
    fn square_wave_strikes_at_rising_edges() {
        let (t, f) = square_wave(0.2, 0.3, 3.0);
        let s = detect_strikes(&t, &f, 30.0);
        let expected = [0.3, 0.8, 1.3, 1.8, 2.3, 2.8];
        assert_eq!(s.len(), expected.len());
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn short_gaps_do_not_count() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        let mut f = vec![100.0; 20];
        f[5] = 0.0;
        f[6] = 0.0;
        assert!(detect_strikes(&t, &f, 30.0).is_empty());
    }

    #[test]
    fn strikes_shift_with_time() {
        let (t, f) = square_wave(0.2, 0.3, 3.0);
        let shifted: Vec<f64> = t.iter().map(|x| x + 12.34).collect();
        let a = detect_strikes(&t, &f, 30.0);
        let b = detect_strikes(&shifted, &f, 30.0);
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| (y - x - 12.34).abs() < 1e-9));
    }

    #[test]
    fn two_point_statistics() {
        let theta: Vec<f64> = (0..SAMPLES).map(|i| (i as f64 * 0.1).sin() * 20.0).collect();
        let plus2: Vec<f64> = theta.iter().map(|x| x + 2.0).collect();
        let c = |a: &Vec<f64>| GaitCycle { start: 0.0, end: 1.0, angles: [a.clone(), a.clone(), a.clone()] };
        let rep = average(&[c(&theta), c(&plus2)]);
        for i in 0..SAMPLES {
            assert!((rep.mean[0][i] - (theta[i] + 1.0)).abs() < 1e-12);
            assert!((rep.sd[2][i] - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_cycles_have_zero_sd() {
        let a: Vec<f64> = (0..SAMPLES).map(|i| i as f64).collect();
        let c = GaitCycle { start: 0.0, end: 1.0, angles: [a.clone(), a.clone(), a.clone()] };
        let rep = average(&[c.clone(), c.clone(), c]);
        assert_eq!(rep.mean[1], a);
        assert!(rep.sd.iter().flatten().all(|s| *s == 0.0));
    }

    fn band_from(mean: Vec<f64>, sd: f64) -> ExperimentalBand {
        ExperimentalBand { mean: [mean.clone(), mean.clone(), mean], sd: [0, 1, 2].map(|_| vec![sd; SAMPLES]) }
    }

    #[test]
    fn agreement_counts() {
        let m: Vec<f64> = (0..SAMPLES).map(|i| (i as f64).cos()).collect();
        let rep = RepresentativeCycle { cycles: 1, mean: [m.clone(), m.clone(), m.clone()], sd: Default::default() };
        assert_eq!(band_agreement(&rep, &band_from(m.clone(), 1.0)).unwrap(), [1.0; 3]);
        let far: Vec<f64> = m.iter().map(|x| x + 10.0).collect();
        assert_eq!(band_agreement(&rep, &band_from(far, 1.0)).unwrap(), [0.0; 3]);
        let half: Vec<f64> = m.iter().enumerate().map(|(i, x)| if i < 50 { x + 10.0 } else { *x }).collect();
        assert_eq!(band_agreement(&rep, &band_from(half, 1.0)).unwrap()[0], 51.0 / 101.0);
    }

    #[test]
    fn band_csv_round_trip() {
        let m: Vec<f64> = (0..SAMPLES).map(|i| i as f64 * 0.3).collect();
        let band = band_from(m, 2.5);
        let mut buf = Vec::new();
        band.write_csv(&mut buf).unwrap();
        let back = ExperimentalBand::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, band);
        assert!(ExperimentalBand::parse("percent,hip\n0,1\n").is_err());
    }

    #[test]
    fn resample_hits_endpoints() {
        let t = [0.0, 0.1, 0.2, 0.3];
        let y = [0.0, 1.0, 4.0, 9.0];
        let r = resample(&t, &y, 0.0, 0.3);
        assert_eq!((r[0], r[100]), (0.0, 9.0));
        assert!((r[50] - 2.5).abs() < 1e-12);
    }
}
