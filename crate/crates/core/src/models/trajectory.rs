use serde::{Deserialize, Serialize};

use super::SystemModel;
use crate::error::{Error, Result};
use crate::io::{csv_error, fmt_f64, json_error, parse_f64, Sig17};
use crate::numerics::{draw_gaussian, SeededRng, SpdMatrix, Vector};

/// One simulated time step: true state, true (noiseless) UI, and measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub x: Vector,
    pub u: Vector,
    pub y: Vector,
}

/// A simulated run with contiguous time indices starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn new(records: Vec<TrajectoryRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no records".into()))?;
        let (n, d, m) = (first.x.len(), first.u.len(), first.y.len());
        if n == 0 || d == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "trajectory dimensions must be positive".into(),
            ));
        }
        for (k, r) in records.iter().enumerate() {
            if r.t != k {
                return Err(Error::InvalidArgument(format!(
                    "time index {} at position {k} is not contiguous",
                    r.t
                )));
            }
            if r.x.len() != n {
                return Err(Error::dim("trajectory state", n, r.x.len()));
            }
            if r.u.len() != d {
                return Err(Error::dim("trajectory input", d, r.u.len()));
            }
            if r.y.len() != m {
                return Err(Error::dim("trajectory measurement", m, r.y.len()));
            }
            let finite = r.x.iter().chain(r.u.iter()).chain(r.y.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::non_finite(format!("trajectory record {k}")));
            }
        }
        Ok(Trajectory { records })
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.records[0].x.len()
    }

    pub fn input_dim(&self) -> usize {
        self.records[0].u.len()
    }

    pub fn output_dim(&self) -> usize {
        self.records[0].y.len()
    }

    pub fn states(&self) -> Vec<Vector> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    pub fn inputs(&self) -> Vec<Vector> {
        self.records.iter().map(|r| r.u.clone()).collect()
    }

    pub fn measurements(&self) -> Vec<Vector> {
        self.records.iter().map(|r| r.y.clone()).collect()
    }

    /// CSV with header `t,x1..xn,u1..ud,y1..ym`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        for (prefix, len) in [
            ("x", self.state_dim()),
            ("u", self.input_dim()),
            ("y", self.output_dim()),
        ] {
            header.extend((1..=len).map(|i| format!("{prefix}{i}")));
        }
        w.write_record(&header).map_err(|e| csv_error("trajectory csv", e))?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x.iter().chain(r.u.iter()).chain(r.y.iter()).map(|v| fmt_f64(*v)));
            w.write_record(&row).map_err(|e| csv_error("trajectory csv", e))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = rd
            .headers()
            .map_err(|e| csv_error("trajectory csv header", e))?
            .clone();
        let (n, d, m) = parse_header(&header)?;
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row.map_err(|e| csv_error("trajectory csv", e))?;
            if row.len() != 1 + n + d + m {
                return Err(Error::Parse {
                    what: "trajectory csv".into(),
                    reason: format!("row has {} fields, expected {}", row.len(), 1 + n + d + m),
                });
            }
            let t: usize = row[0].trim().parse().map_err(|_| Error::Parse {
                what: "trajectory csv".into(),
                reason: format!("invalid time index `{}`", &row[0]),
            })?;
            let vals = row
                .iter()
                .skip(1)
                .map(|s| parse_f64(s, "trajectory csv"))
                .collect::<Result<Vec<_>>>()?;
            records.push(TrajectoryRecord {
                t,
                x: Vector::from_column_slice(&vals[..n]),
                u: Vector::from_column_slice(&vals[n..n + d]),
                y: Vector::from_column_slice(&vals[n + d..]),
            });
        }
        Trajectory::new(records)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Rec<'a> {
            t: usize,
            x: Sig17<'a>,
            u: Sig17<'a>,
            y: Sig17<'a>,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            state_dim: usize,
            input_dim: usize,
            output_dim: usize,
            records: Vec<Rec<'a>>,
        }
        let doc = Doc {
            state_dim: self.state_dim(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            records: self
                .records
                .iter()
                .map(|r| Rec {
                    t: r.t,
                    x: Sig17(r.x.as_slice()),
                    u: Sig17(r.u.as_slice()),
                    y: Sig17(r.y.as_slice()),
                })
                .collect(),
        };
        serde_json::to_string(&doc).map_err(|e| json_error("trajectory json", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Rec {
            t: usize,
            x: Vec<f64>,
            u: Vec<f64>,
            y: Vec<f64>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            state_dim: usize,
            input_dim: usize,
            output_dim: usize,
            records: Vec<Rec>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| json_error("trajectory json", e))?;
        let records: Vec<TrajectoryRecord> = doc
            .records
            .into_iter()
            .map(|r| TrajectoryRecord {
                t: r.t,
                x: Vector::from_vec(r.x),
                u: Vector::from_vec(r.u),
                y: Vector::from_vec(r.y),
            })
            .collect();
        let traj = Trajectory::new(records)?;
        let dims = (traj.state_dim(), traj.input_dim(), traj.output_dim());
        if dims != (doc.state_dim, doc.input_dim, doc.output_dim) {
            return Err(Error::Parse {
                what: "trajectory json".into(),
                reason: format!(
                    "declared dimensions {:?} disagree with records {dims:?}",
                    (doc.state_dim, doc.input_dim, doc.output_dim)
                ),
            });
        }
        Ok(traj)
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize, usize)> {
    let bad = |reason: String| Error::Parse {
        what: "trajectory csv header".into(),
        reason,
    };
    if header.get(0) != Some("t") {
        return Err(bad("first column must be `t`".into()));
    }
    let mut counts = [0usize; 3];
    let mut stage = 0;
    for name in header.iter().skip(1) {
        let k = match name.chars().next() {
            Some('x') => 0,
            Some('u') => 1,
            Some('y') => 2,
            _ => return Err(bad(format!("unexpected column `{name}`"))),
        };
        let idx = &name[1..];
        if k < stage {
            return Err(bad(format!("column `{name}` out of order")));
        }
        stage = k;
        counts[k] += 1;
        if idx != counts[k].to_string() {
            return Err(bad(format!("column `{name}` out of sequence")));
        }
    }
    if counts.contains(&0) {
        return Err(bad("state, input and measurement columns are all required".into()));
    }
    Ok((counts[0], counts[1], counts[2]))
}

/// Rolls out `x_{t+1} = f(x_t, u_t) + w_t`, `y_t = h(x_t) + v_t`.
///
/// Per step the measurement noise is drawn before the process noise.
pub fn simulate(
    model: &dyn SystemModel,
    ui_signal: &dyn Fn(usize) -> Vector,
    q: &SpdMatrix,
    r: &SpdMatrix,
    x0: &Vector,
    steps: usize,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    let (n, d, m) = (model.state_dim(), model.input_dim(), model.output_dim());
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if q.dim() != n {
        return Err(Error::dim("process noise covariance", n, q.dim()));
    }
    if r.dim() != m {
        return Err(Error::dim("measurement noise covariance", m, r.dim()));
    }
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    for t in 0..steps {
        let u = ui_signal(t);
        if u.len() != d {
            return Err(Error::dim("UI signal", d, u.len()).at_step(t));
        }
        let y = draw_gaussian(rng, &model.observe(&x), r).map_err(|e| e.at_step(t))?;
        let next = draw_gaussian(rng, &model.transition(&x, &u), q).map_err(|e| e.at_step(t))?;
        records.push(TrajectoryRecord {
            t,
            x: std::mem::replace(&mut x, next),
            u,
            y,
        });
    }
    Trajectory::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{RigidLink, SquareWave};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn tiny(n: usize) -> SpdMatrix {
        SpdMatrix::scaled_identity(n, 1e-300).unwrap()
    }

    fn case_study(steps: usize, seed: u64) -> Trajectory {
        let model = RigidLink::default();
        let wave = SquareWave::default();
        simulate(
            &model,
            &|t| wave.at(t),
            &SpdMatrix::scaled_identity(2, 1e-3).unwrap(),
            &SpdMatrix::scaled_identity(3, 0.5).unwrap(),
            &Vector::zeros(2),
            steps,
            &mut SeededRng::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_rollout_iterates_f() {
        let model = RigidLink::default();
        let u = Vector::from_column_slice(&[2.0, 0.5]);
        let x0 = Vector::from_column_slice(&[0.1, 0.3]);
        let uc = u.clone();
        let traj = simulate(&model, &move |_| uc.clone(), &tiny(2), &tiny(3), &x0, 50, &mut SeededRng::new(3)).unwrap();
        let mut x = x0;
        for r in traj.records() {
            assert!((&r.x - &x).amax() < 1e-140);
            x = model.transition(&x, &u);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        assert_eq!(case_study(200, 5), case_study(200, 5));
        assert_ne!(case_study(200, 5), case_study(200, 6));
    }

    #[test]
    fn case_study_rollout_stays_bounded() {
        let traj = case_study(1000, 17);
        assert_eq!(traj.len(), 1000);
        for r in traj.records() {
            assert!(r.x[1].abs() < 2.0 * PI);
        }
    }

    #[test]
    fn damping_dissipates_velocity() {
        let model = RigidLink::default();
        let x0 = Vector::from_column_slice(&[3.0, FRAC_PI_2 + 0.4]);
        let traj = simulate(&model, &|_| Vector::zeros(2), &tiny(2), &tiny(3), &x0, 3000, &mut SeededRng::new(0)).unwrap();
        assert!(traj.records().last().unwrap().x[0].abs() < 1e-3);
    }

    #[test]
    fn csv_and_json_round_trip_bit_exact() {
        let traj = case_study(40, 9);
        let csv = traj.to_csv().unwrap();
        assert!(csv.starts_with("t,x1,x2,u1,u2,y1,y2,y3\n"));
        assert_eq!(Trajectory::from_csv(&csv).unwrap(), traj);
        let json = traj.to_json().unwrap();
        assert_eq!(Trajectory::from_json(&json).unwrap(), traj);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(Trajectory::from_csv("").is_err());
        assert!(Trajectory::from_csv("t,x1,u1\n0,1,2\n").is_err());
        assert!(Trajectory::from_csv("t,x1,u1,y1\n1,1,2,3\n").is_err());
        assert!(Trajectory::from_csv("t,x1,u1,y1\n0,1,2\n").is_err());
        assert!(Trajectory::from_csv("t,x1,u1,y1\n0,1,NaN,3\n").is_err());
        assert!(Trajectory::from_csv("t,u1,x1,y1\n0,1,2,3\n").is_err());
        assert!(Trajectory::from_csv("t,x2,u1,y1\n0,1,2,3\n").is_err());
        assert!(Trajectory::from_json("{}").is_err());
        let j = r#"{"state_dim":2,"input_dim":1,"output_dim":1,"records":[{"t":0,"x":[1],"u":[1],"y":[1]}]}"#;
        assert!(Trajectory::from_json(j).is_err());
        let ok = r#"{"state_dim":1,"input_dim":1,"output_dim":1,"records":[{"t":0,"x":[1],"u":[1],"y":[1]}]}"#;
        assert_eq!(Trajectory::from_json(ok).unwrap().len(), 1);
    }
}
