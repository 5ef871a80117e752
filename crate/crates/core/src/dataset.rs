//! Demonstration sets: ingestion, synthesis, and perturbation.
//!
//! A demonstration set holds M trajectories of N samples each, every sample
//! a (position, velocity, time) triple in d dimensions. All ingestion paths
//! translate each trajectory so its final position is exactly the origin;
//! downstream modules assume the target sits at zero.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default bound on the distance between a trajectory's final position and
/// the origin after ingest translation.
pub const DEFAULT_SNAP_TOL: f64 = 1e-9;

/// One recorded instant of a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub time: f64,
}

/// An ordered trajectory of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub samples: Vec<Sample>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Position of the first sample.
    pub fn start(&self) -> &DVector<f64> {
        &self.samples[0].position
    }

    /// Elapsed time from first to last sample.
    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].time - self.samples[0].time
    }

    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| s.position.clone()).collect()
    }
}

/// M demonstrations of N samples each, d-dimensional, target at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    d: usize,
    demos: Vec<Demonstration>,
}

impl DemonstrationSet {
    /// Validates, equalizes lengths, and translates each demonstration so it
    /// ends exactly at the origin.
    ///
    /// Demonstrations longer than the shortest are truncated from the front,
    /// keeping the approach to the target intact. Sample times must be
    /// strictly increasing within each demonstration.
    pub fn new(mut demos: Vec<Demonstration>, snap_tol: f64) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Argument("need at least one demonstration".into()));
        }
        let d = demos[0]
            .samples
            .first()
            .map(|s| s.position.len())
            .ok_or_else(|| Error::Data("demonstration 0 is empty".into()))?;

        for (m, demo) in demos.iter().enumerate() {
            if demo.len() < 2 {
                return Err(Error::Data(format!(
                    "demonstration {m} has {} samples, need at least 2",
                    demo.len()
                )));
            }
            for (n, s) in demo.samples.iter().enumerate() {
                if s.position.len() != d || s.velocity.len() != d {
                    return Err(Error::Schema(format!(
                        "demonstration {m} sample {n} has dimension {}x{}, expected {d}",
                        s.position.len(),
                        s.velocity.len()
                    )));
                }
                if !s.position.iter().chain(s.velocity.iter()).all(|v| v.is_finite()) {
                    return Err(Error::Data(format!(
                        "demonstration {m} sample {n} contains non-finite values"
                    )));
                }
            }
            for w in demo.samples.windows(2) {
                if !(w[1].time > w[0].time) {
                    return Err(Error::Data(format!(
                        "demonstration {m} has non-increasing sample times"
                    )));
                }
            }
        }

        let n_min = demos.iter().map(|demo| demo.len()).min().unwrap();
        for demo in &mut demos {
            let excess = demo.len() - n_min;
            if excess > 0 {
                demo.samples.drain(..excess);
            }
        }

        for demo in &mut demos {
            let shift = demo.samples[demo.samples.len() - 1].position.clone();
            for s in &mut demo.samples {
                s.position -= &shift;
            }
            let final_norm = demo.samples[demo.samples.len() - 1].position.norm();
            if final_norm > snap_tol {
                return Err(Error::Data(format!(
                    "final position {final_norm:e} exceeds snap tolerance {snap_tol:e}"
                )));
            }
        }

        Ok(Self { d, demos })
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    /// Number of demonstrations M.
    pub fn num_demos(&self) -> usize {
        self.demos.len()
    }

    /// Samples per demonstration N.
    pub fn samples_per_demo(&self) -> usize {
        self.demos[0].len()
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn iter_samples(&self) -> impl Iterator<Item = &Sample> {
        self.demos.iter().flat_map(|demo| demo.samples.iter())
    }

    /// Initial positions of all demonstrations.
    pub fn starts(&self) -> Vec<DVector<f64>> {
        self.demos.iter().map(|demo| demo.start().clone()).collect()
    }

    /// Duration of the first demonstration.
    pub fn duration(&self) -> f64 {
        self.demos[0].duration()
    }

    /// Stacked (position, velocity) points in 2d dimensions.
    pub fn joint_samples(&self) -> Vec<DVector<f64>> {
        self.iter_samples()
            .map(|s| {
                let mut z = DVector::zeros(2 * self.d);
                z.rows_mut(0, self.d).copy_from(&s.position);
                z.rows_mut(self.d, self.d).copy_from(&s.velocity);
                z
            })
            .collect()
    }

    /// Mean per-dimension variance of the joint (position, velocity) data.
    ///
    /// Used to scale numerical floors so they track the data's units.
    pub fn variance_scale(&self) -> f64 {
        let points = self.joint_samples();
        let n = points.len() as f64;
        let dim = 2 * self.d;
        let mut mean = DVector::zeros(dim);
        for p in &points {
            mean += p;
        }
        mean /= n;
        let mut var = 0.0;
        for p in &points {
            var += (p - &mean).norm_squared();
        }
        var / (n * dim as f64)
    }

    /// Mean per-dimension variance of the positions alone.
    pub fn position_variance_scale(&self) -> f64 {
        self.block_variance(|s| &s.position)
    }

    /// Mean per-dimension variance of the velocities alone.
    pub fn velocity_variance_scale(&self) -> f64 {
        self.block_variance(|s| &s.velocity)
    }

    fn block_variance<'a, F>(&'a self, field: F) -> f64
    where
        F: Fn(&'a Sample) -> &'a DVector<f64>,
    {
        let n = (self.num_demos() * self.samples_per_demo()) as f64;
        let mut mean = DVector::zeros(self.d);
        for s in self.iter_samples() {
            mean += field(s);
        }
        mean /= n;
        let mut var = 0.0;
        for s in self.iter_samples() {
            var += (field(s) - &mean).norm_squared();
        }
        var / (n * self.d as f64)
    }

    /// Per-dimension range (max - min) of positions.
    pub fn position_ranges(&self) -> Vec<f64> {
        self.ranges(|s| &s.position)
    }

    /// Per-dimension range (max - min) of velocities.
    pub fn velocity_ranges(&self) -> Vec<f64> {
        self.ranges(|s| &s.velocity)
    }

    fn ranges<'a, F>(&'a self, field: F) -> Vec<f64>
    where
        F: Fn(&'a Sample) -> &'a DVector<f64>,
    {
        let mut lo = vec![f64::INFINITY; self.d];
        let mut hi = vec![f64::NEG_INFINITY; self.d];
        for s in self.iter_samples() {
            let v = field(s);
            for i in 0..self.d {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        lo.iter().zip(&hi).map(|(a, b)| b - a).collect()
    }

    /// Adds range-scaled uniform noise to positions and velocities.
    ///
    /// Noise amplitude per coordinate is `level` times that coordinate's data
    /// range. The final sample of every demonstration is left untouched so the
    /// target anchor stays exact. `level = 0` returns an identical set.
    pub fn add_noise(&self, level: f64, seed: u64) -> Result<DemonstrationSet> {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::Argument(format!(
                "noise level must lie in [0, 1], got {level}"
            )));
        }
        if level == 0.0 {
            return Ok(self.clone());
        }
        let pos_amp: Vec<f64> = self.position_ranges().iter().map(|r| r * level).collect();
        let vel_amp: Vec<f64> = self.velocity_ranges().iter().map(|r| r * level).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for demo in &mut out.demos {
            let last = demo.samples.len() - 1;
            for s in &mut demo.samples[..last] {
                for i in 0..self.d {
                    s.position[i] += rng.gen_range(-1.0..=1.0) * pos_amp[i];
                }
                for i in 0..self.d {
                    s.velocity[i] += rng.gen_range(-1.0..=1.0) * vel_amp[i];
                }
            }
        }
        Ok(out)
    }

    /// Writes the set in the `demo,t,x1..xd,dx1..dxd` CSV schema.
    ///
    /// Floats are printed in shortest round-trip form, so a save/load cycle
    /// reproduces the set bit-exactly.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        use std::io::Write;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "demo,t")?;
        for i in 1..=self.d {
            write!(file, ",x{i}")?;
        }
        for i in 1..=self.d {
            write!(file, ",dx{i}")?;
        }
        writeln!(file)?;
        for (m, demo) in self.demos.iter().enumerate() {
            for s in &demo.samples {
                write!(file, "{m},{}", s.time)?;
                for v in s.position.iter() {
                    write!(file, ",{v}")?;
                }
                for v in s.velocity.iter() {
                    write!(file, ",{v}")?;
                }
                writeln!(file)?;
            }
        }
        Ok(())
    }
}

/// Central-difference velocities for position-only recordings.
///
/// Interior samples use central differences; the endpoints fall back to
/// one-sided differences.
pub fn finite_difference_velocities(
    positions: &[DVector<f64>],
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    if positions.len() != times.len() {
        return Err(Error::Argument(format!(
            "{} positions but {} times",
            positions.len(),
            times.len()
        )));
    }
    let n = positions.len();
    if n < 2 {
        return Err(Error::Data("need at least 2 samples to differentiate".into()));
    }
    let mut vels = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let dt = times[b] - times[a];
        if dt <= 0.0 {
            return Err(Error::Data(format!("non-increasing times around sample {i}")));
        }
        vels.push((&positions[b] - &positions[a]) / dt);
    }
    Ok(vels)
}

/// Loads a demonstration set with the default snap tolerance.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<DemonstrationSet> {
    load_csv_with(path, DEFAULT_SNAP_TOL)
}

/// Loads a `demo,t,x1..xd[,dx1..dxd]` CSV.
///
/// Rows are grouped by demo id (order of first appearance) and sorted by
/// time within each group. When the velocity columns are absent, velocities
/// are reconstructed by finite differences of the positions.
pub fn load_csv_with<P: AsRef<Path>>(path: P, snap_tol: f64) -> Result<DemonstrationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())
        .map_err(map_csv_error)?;

    let headers = reader.headers().map_err(map_csv_error)?.clone();
    let (d, has_velocities) = parse_header(&headers)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, DVector<f64>, Option<DVector<f64>>)>> =
        HashMap::new();

    for record in reader.records() {
        let record = record.map_err(map_csv_error)?;
        let row = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        let id = record[0].to_string();
        let t = parse_field(&record[1], row, "t")?;
        let mut pos = DVector::zeros(d);
        for i in 0..d {
            pos[i] = parse_field(&record[2 + i], row, &format!("x{}", i + 1))?;
        }
        let vel = if has_velocities {
            let mut v = DVector::zeros(d);
            for i in 0..d {
                v[i] = parse_field(&record[2 + d + i], row, &format!("dx{}", i + 1))?;
            }
            Some(v)
        } else {
            None
        };
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push((t, pos, vel));
    }

    let mut demos = Vec::with_capacity(order.len());
    for id in &order {
        let mut rows = groups.remove(id).unwrap();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if rows.len() < 2 {
            return Err(Error::Data(format!("demo '{id}' has fewer than 2 samples")));
        }
        let samples = if has_velocities {
            rows.into_iter()
                .map(|(t, position, velocity)| Sample {
                    position,
                    velocity: velocity.unwrap(),
                    time: t,
                })
                .collect()
        } else {
            let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let positions: Vec<DVector<f64>> = rows.iter().map(|r| r.1.clone()).collect();
            let velocities = finite_difference_velocities(&positions, &times)?;
            rows.into_iter()
                .zip(velocities)
                .map(|((t, position, _), velocity)| Sample {
                    position,
                    velocity,
                    time: t,
                })
                .collect()
        };
        demos.push(Demonstration { samples });
    }

    DemonstrationSet::new(demos, snap_tol)
}

fn parse_header(headers: &csv::StringRecord) -> Result<(usize, bool)> {
    let fields: Vec<&str> = headers.iter().collect();
    if fields.len() < 3 || fields[0] != "demo" || fields[1] != "t" {
        return Err(Error::Schema(
            "header must start with demo,t followed by x1..xd[,dx1..dxd]".into(),
        ));
    }
    let mut d = 0;
    while 2 + d < fields.len() && fields[2 + d] == format!("x{}", d + 1) {
        d += 1;
    }
    if d == 0 {
        return Err(Error::Schema("no position columns x1.. found".into()));
    }
    let rest = &fields[2 + d..];
    if rest.is_empty() {
        return Ok((d, false));
    }
    if rest.len() != d {
        return Err(Error::Schema(format!(
            "{d} position columns but {} velocity columns",
            rest.len()
        )));
    }
    for (i, name) in rest.iter().enumerate() {
        if *name != format!("dx{}", i + 1) {
            return Err(Error::Schema(format!(
                "expected velocity column dx{}, found '{name}'",
                i + 1
            )));
        }
    }
    Ok((d, true))
}

fn parse_field(raw: &str, row: usize, name: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        msg: format!("cannot parse {name} value '{raw}'"),
    })
}

fn map_csv_error(err: csv::Error) -> Error {
    let row = err
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::UnequalLengths { .. } => Error::Schema(format!(
            "row {row} has a different number of columns than the header"
        )),
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot read csv: {err}")),
        _ => Error::Parse {
            row,
            msg: err.to_string(),
        },
    }
}

/// The five benchmark curve families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    C,
    G,
    W,
    Sine,
    S,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::C, Shape::G, Shape::W, Shape::Sine, Shape::S];
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Shape::C => "C",
            Shape::G => "G",
            Shape::W => "W",
            Shape::Sine => "Sine",
            Shape::S => "S",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(Shape::C),
            "g" => Ok(Shape::G),
            "w" => Ok(Shape::W),
            "sine" => Ok(Shape::Sine),
            "s" => Ok(Shape::S),
            other => Err(Error::Argument(format!("unknown shape '{other}'"))),
        }
    }
}

/// Closed-form template curve and its derivative at parameter `s` in [0, 1].
///
/// Curves are defined as raw(s) minus raw(1), so every template ends exactly
/// at the origin:
///
/// * C    - circular arc of radius 1.5 swept 200 degrees toward the target tip
/// * G    - 250 degree arc whose radius contracts as 1 - 0.35 s^4, hooking inward
/// * W    - left-to-right stroke (3s, cos^2(2 pi s)) giving three peaks
/// * Sine - damped sinusoid (3s, 0.8 e^(-1.2 s) sin(3 pi s))
/// * S    - one full lateral period (0.9 sin(2 pi s), 2.4 (1 - s)) descending
fn template(shape: Shape, s: f64) -> (DVector<f64>, DVector<f64>) {
    use std::f64::consts::PI;
    let (raw, draw) = match shape {
        Shape::C => {
            let r = 1.5;
            let phi0 = 5.0 * PI / 6.0;
            let dphi = -10.0 * PI / 9.0;
            let phi = phi0 + dphi * s;
            (
                [r * phi.cos(), r * phi.sin()],
                [-r * phi.sin() * dphi, r * phi.cos() * dphi],
            )
        }
        Shape::G => {
            let r0 = 1.6;
            let phi0 = 5.0 * PI / 6.0;
            let dphi = -25.0 * PI / 18.0;
            let phi = phi0 + dphi * s;
            let r = r0 * (1.0 - 0.35 * s.powi(4));
            let dr = -r0 * 1.4 * s.powi(3);
            (
                [r * phi.cos(), r * phi.sin()],
                [
                    dr * phi.cos() - r * phi.sin() * dphi,
                    dr * phi.sin() + r * phi.cos() * dphi,
                ],
            )
        }
        Shape::W => {
            let a = 4.0 * PI * s;
            ([3.0 * s, 0.5 * (1.0 + a.cos())], [3.0, -2.0 * PI * a.sin()])
        }
        Shape::Sine => {
            let damp = 0.8 * (-1.2 * s).exp();
            let a = 3.0 * PI * s;
            (
                [3.0 * s, damp * a.sin()],
                [3.0, damp * (3.0 * PI * a.cos() - 1.2 * a.sin())],
            )
        }
        Shape::S => {
            let a = 2.0 * PI * s;
            (
                [0.9 * a.sin(), 2.4 * (1.0 - s)],
                [0.9 * 2.0 * PI * a.cos(), -2.4],
            )
        }
    };
    (DVector::from_row_slice(&raw), DVector::from_row_slice(&draw))
}

const WARP_HARMONICS: usize = 3;
const TEMPLATE_EXTENT: f64 = 3.0;

/// Generates a synthetic demonstration set for one of the benchmark shapes.
///
/// Each demonstration is the shape template plus a per-demo smooth warp: a
/// short sine series vanishing at both endpoints, with amplitude scaled by
/// `jitter`. The curve parameter is eased out in time, tau = 1 - (1 - t)^2,
/// so motions decelerate and arrive at the target at rest like recorded
/// point-to-point demonstrations. Velocities come from analytic
/// differentiation of the warped, time-warped curve, and the whole
/// construction is deterministic per seed.
pub fn synth_shape(
    shape: Shape,
    m: usize,
    n: usize,
    jitter: f64,
    seed: u64,
) -> Result<DemonstrationSet> {
    use std::f64::consts::PI;
    if m < 1 {
        return Err(Error::Argument("need at least one demonstration".into()));
    }
    if n < 2 {
        return Err(Error::Argument("need at least two samples per demonstration".into()));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::Argument(format!(
            "jitter must lie in [0, 1), got {jitter}"
        )));
    }

    let (end, _) = template(shape, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(m);
    for _ in 0..m {
        // Warp coefficients per dimension and harmonic; sin(j pi s) vanishes
        // at s = 0 and s = 1 so the target stays on the template. An extra
        // cos(pi s / 2) term vanishes only at the target, spreading the
        // start points the way separate recordings would.
        let mut coeffs = [[0.0; WARP_HARMONICS]; 2];
        let mut start_offsets = [0.0; 2];
        for (dim_coeffs, offset) in coeffs.iter_mut().zip(&mut start_offsets) {
            for (j, c) in dim_coeffs.iter_mut().enumerate() {
                *c = rng.gen_range(-1.0..=1.0) * jitter * TEMPLATE_EXTENT / (j + 1) as f64;
            }
            *offset = rng.gen_range(-1.0..=1.0) * jitter * TEMPLATE_EXTENT * 0.5;
        }
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let s = 1.0 - (1.0 - t) * (1.0 - t);
            let ds = 2.0 * (1.0 - t);
            let (raw, draw) = template(shape, s);
            let mut position = raw - &end;
            let mut velocity = draw * ds;
            for (dim, dim_coeffs) in coeffs.iter().enumerate() {
                for (j, c) in dim_coeffs.iter().enumerate() {
                    let w = (j + 1) as f64 * PI;
                    position[dim] += c * (w * s).sin();
                    velocity[dim] += c * w * (w * s).cos() * ds;
                }
                let half = 0.5 * PI;
                position[dim] += start_offsets[dim] * (half * s).cos();
                velocity[dim] -= start_offsets[dim] * half * (half * s).sin() * ds;
            }
            samples.push(Sample {
                position,
                velocity,
                time: t,
            });
        }
        demos.push(Demonstration { samples });
    }
    DemonstrationSet::new(demos, DEFAULT_SNAP_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_from(points: &[(f64, [f64; 2], [f64; 2])]) -> Demonstration {
        Demonstration {
            samples: points
                .iter()
                .map(|(t, p, v)| Sample {
                    position: DVector::from_row_slice(p),
                    velocity: DVector::from_row_slice(v),
                    time: *t,
                })
                .collect(),
        }
    }

    #[test]
    fn ingest_translates_to_origin() {
        let demo = |offset: f64| {
            demo_from(&[
                (0.0, [offset, offset], [1.0, 1.0]),
                (0.5, [offset + 0.5, offset + 0.5], [1.0, 1.0]),
                (1.0, [1.0, 1.0], [0.0, 0.0]),
            ])
        };
        let set = DemonstrationSet::new(vec![demo(-1.0), demo(-0.5)], DEFAULT_SNAP_TOL).unwrap();
        for d in set.demos() {
            let last = &d.samples[d.len() - 1].position;
            assert_eq!(last[0], 0.0);
            assert_eq!(last[1], 0.0);
        }
        // All positions shifted by (-1, -1).
        assert_eq!(set.demos()[0].samples[0].position[0], -2.0);
        assert_eq!(set.demos()[1].samples[0].position[0], -1.5);
    }

    #[test]
    fn rejects_single_sample_demo() {
        let demo = demo_from(&[(0.0, [1.0, 2.0], [0.0, 0.0])]);
        let err = DemonstrationSet::new(vec![demo], DEFAULT_SNAP_TOL).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn truncates_to_common_length_from_front() {
        let long = demo_from(&[
            (0.0, [5.0, 0.0], [1.0, 0.0]),
            (1.0, [4.0, 0.0], [1.0, 0.0]),
            (2.0, [3.0, 0.0], [1.0, 0.0]),
            (3.0, [2.0, 0.0], [1.0, 0.0]),
        ]);
        let short = demo_from(&[
            (0.0, [1.0, 0.0], [1.0, 0.0]),
            (1.0, [0.5, 0.0], [1.0, 0.0]),
            (2.0, [0.0, 0.0], [0.0, 0.0]),
        ]);
        let set = DemonstrationSet::new(vec![long, short], DEFAULT_SNAP_TOL).unwrap();
        assert_eq!(set.samples_per_demo(), 3);
        // The long demo kept its last three samples.
        assert_eq!(set.demos()[0].samples[0].time, 1.0);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let set = synth_shape(Shape::Sine, 3, 40, 0.05, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.csv");
        let path_b = dir.path().join("b.csv");
        set.save_csv(&path_a).unwrap();
        let loaded = load_csv(&path_a).unwrap();
        loaded.save_csv(&path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
        assert_eq!(set, loaded);
    }

    #[test]
    fn csv_mixed_widths_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "demo,t,x1,x2,dx1,dx2\n0,0.0,1.0,2.0,0.1,0.2\n0,1.0,1.0,2.0,0.1,0.2,0.3\n",
        )
        .unwrap();
        let err = load_csv(&path).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "got {err:?}");
    }

    #[test]
    fn csv_velocity_header_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "demo,t,x1,x2,dx1\n0,0.0,1.0,2.0,0.1\n").unwrap();
        assert!(matches!(load_csv(&path).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn csv_bad_float_is_parse_error_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "demo,t,x1,dx1\n0,0.0,1.0,0.1\n0,1.0,oops,0.1\n0,2.0,0.0,0.0\n",
        )
        .unwrap();
        match load_csv(&path).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_without_velocity_columns_differentiates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pos_only.csv");
        // Quadratic position 2t^2: central differences are exact.
        let mut body = String::from("demo,t,x1\n");
        for i in 0..5 {
            let t = i as f64;
            body.push_str(&format!("0,{t},{}\n", 2.0 * t * t));
        }
        std::fs::write(&path, body).unwrap();
        let set = load_csv(&path).unwrap();
        let vels: Vec<f64> = set.demos()[0].samples.iter().map(|s| s.velocity[0]).collect();
        // Interior derivative of 2t^2 is 4t; endpoints are one-sided.
        assert_eq!(vels[1], 4.0);
        assert_eq!(vels[2], 8.0);
        assert_eq!(vels[3], 12.0);
        assert_eq!(vels[0], 2.0);
        assert_eq!(vels[4], 14.0);
    }

    #[test]
    fn lasa_sized_export_loads() {
        let set = synth_shape(Shape::S, 7, 1000, 0.03, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        set.save_csv(&path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.num_demos(), 7);
        assert_eq!(loaded.samples_per_demo(), 1000);
        assert_eq!(loaded.dims(), 2);
    }

    #[test]
    fn synth_zero_jitter_gives_identical_demos() {
        let set = synth_shape(Shape::Sine, 3, 100, 0.0, 0).unwrap();
        assert_eq!(set.demos()[0], set.demos()[1]);
        assert_eq!(set.demos()[1], set.demos()[2]);
        let last = &set.demos()[0].samples[99].position;
        assert_eq!(last.norm(), 0.0);
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let a = synth_shape(Shape::G, 4, 64, 0.08, 1).unwrap();
        let b = synth_shape(Shape::G, 4, 64, 0.08, 1).unwrap();
        assert_eq!(a, b);
        let c = synth_shape(Shape::G, 4, 64, 0.08, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_jitter_keeps_endpoint_at_origin() {
        let set = synth_shape(Shape::C, 7, 200, 0.05, 42).unwrap();
        assert_eq!(set.num_demos(), 7);
        let max_end = set
            .demos()
            .iter()
            .map(|demo| demo.samples[demo.len() - 1].position.norm())
            .fold(0.0_f64, f64::max);
        assert_eq!(max_end, 0.0);
        // Demos differ away from the endpoints.
        assert_ne!(set.demos()[0].samples[100], set.demos()[1].samples[100]);
    }

    #[test]
    fn synth_rejects_unknown_arguments() {
        assert!(matches!(
            synth_shape(Shape::W, 0, 10, 0.0, 0).unwrap_err(),
            Error::Argument(_)
        ));
        assert!(matches!(
            synth_shape(Shape::W, 1, 1, 0.0, 0).unwrap_err(),
            Error::Argument(_)
        ));
        assert!(matches!("q".parse::<Shape>().unwrap_err(), Error::Argument(_)));
    }

    #[test]
    fn noise_zero_is_identity() {
        let set = synth_shape(Shape::W, 2, 50, 0.02, 3).unwrap();
        let noisy = set.add_noise(0.0, 17).unwrap();
        assert_eq!(set, noisy);
    }

    #[test]
    fn noise_is_range_scaled_and_bounded() {
        let set = synth_shape(Shape::S, 3, 80, 0.0, 0).unwrap();
        let level = 0.05;
        let noisy = set.add_noise(level, 5).unwrap();
        let pos_amp: Vec<f64> = set.position_ranges().iter().map(|r| r * level).collect();
        let vel_amp: Vec<f64> = set.velocity_ranges().iter().map(|r| r * level).collect();
        let mut saw_nonzero = false;
        for (a, b) in set.iter_samples().zip(noisy.iter_samples()) {
            for i in 0..set.dims() {
                let dp = (a.position[i] - b.position[i]).abs();
                let dv = (a.velocity[i] - b.velocity[i]).abs();
                assert!(dp <= pos_amp[i] + 1e-12);
                assert!(dv <= vel_amp[i] + 1e-12);
                saw_nonzero |= dp > 0.0 || dv > 0.0;
            }
        }
        assert!(saw_nonzero);
    }

    #[test]
    fn noise_keeps_target_anchor_exact() {
        let set = synth_shape(Shape::C, 3, 60, 0.02, 8).unwrap();
        let noisy = set.add_noise(0.05, 99).unwrap();
        for (a, b) in set.demos().iter().zip(noisy.demos()) {
            assert_eq!(a.samples[a.len() - 1], b.samples[b.len() - 1]);
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let set = synth_shape(Shape::Sine, 2, 40, 0.02, 1).unwrap();
        assert_eq!(
            set.add_noise(0.03, 7).unwrap(),
            set.add_noise(0.03, 7).unwrap()
        );
        assert_ne!(
            set.add_noise(0.03, 7).unwrap(),
            set.add_noise(0.03, 8).unwrap()
        );
    }

    #[test]
    fn finite_difference_requires_two_samples() {
        let p = vec![DVector::from_row_slice(&[0.0])];
        let t = vec![0.0];
        assert!(finite_difference_velocities(&p, &t).is_err());
    }
}
