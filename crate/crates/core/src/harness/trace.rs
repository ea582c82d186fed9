use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use super::generate::Generated;
use crate::error::{Error, Result};
use crate::fejer::PDPoint;
use crate::solver::{SolveReport, SolverConfig};

pub const TRACE_HEADER: [&str; 9] = [
    "n",
    "tau",
    "theta",
    "delta",
    "s_norm",
    "t_norm",
    "kt_res",
    "dist_to_oracle",
    "wall_ns",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub n: usize,
    pub tau: f64,
    pub theta: f64,
    pub delta: f64,
    pub s_norm: f64,
    pub t_norm: f64,
    pub kt_res: f64,
    pub dist_to_oracle: Option<f64>,
    /// Nanoseconds since the solve started.
    pub wall_ns: u64,
    /// Values of the extra block-labeled columns, in header order.
    pub blocks: Vec<f64>,
}

/// A run's records together with the labels of any extra columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub block_labels: Vec<String>,
    pub records: Vec<TraceRecord>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, col: &str, line: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Trace(format!("line {line}: bad value '{s}' in column {col}")))
}

impl Trace {
    pub fn header(&self) -> Vec<String> {
        TRACE_HEADER
            .iter()
            .map(|s| s.to_string())
            .chain(self.block_labels.iter().cloned())
            .collect()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            if r.blocks.len() != self.block_labels.len() {
                return Err(Error::Trace(format!(
                    "record {} has {} block values for {} labels",
                    r.n,
                    r.blocks.len(),
                    self.block_labels.len()
                )));
            }
            let mut row = vec![
                r.n.to_string(),
                fmt_f64(r.tau),
                fmt_f64(r.theta),
                fmt_f64(r.delta),
                fmt_f64(r.s_norm),
                fmt_f64(r.t_norm),
                fmt_f64(r.kt_res),
                r.dist_to_oracle.map(fmt_f64).unwrap_or_default(),
                r.wall_ns.to_string(),
            ];
            row.extend(r.blocks.iter().map(|&b| fmt_f64(b)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Trace> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.len() < TRACE_HEADER.len() || header[..TRACE_HEADER.len()] != TRACE_HEADER {
            return Err(Error::Trace(format!("unexpected header {header:?}")));
        }
        let block_labels = header[TRACE_HEADER.len()..].to_vec();
        let mut records = Vec::new();
        for (i, row) in rd.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let f = |j: usize| parse_f64(&row[j], TRACE_HEADER[j], line);
            let n = row[0]
                .parse()
                .map_err(|_| Error::Trace(format!("line {line}: bad iteration '{}'", &row[0])))?;
            let dist_to_oracle = match &row[7] {
                "" => None,
                s => Some(parse_f64(s, "dist_to_oracle", line)?),
            };
            let wall_ns = row[8]
                .parse()
                .map_err(|_| Error::Trace(format!("line {line}: bad wall_ns '{}'", &row[8])))?;
            let blocks = (TRACE_HEADER.len()..header.len())
                .map(|j| parse_f64(&row[j], &header[j], line))
                .collect::<Result<_>>()?;
            records.push(TraceRecord {
                n,
                tau: f(1)?,
                theta: f(2)?,
                delta: f(3)?,
                s_norm: f(4)?,
                t_norm: f(5)?,
                kt_res: f(6)?,
                dist_to_oracle,
                wall_ns,
                blocks,
            });
        }
        Ok(Trace { block_labels, records })
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn read_path(path: &Path) -> Result<Trace> {
        Trace::read(File::open(path)?)
    }
}

/// Solves a generated instance from `init`, recording one trace record per
/// iteration. Block instances get per-block residual columns
/// `kt_res_x1.., kt_res_v1..`.
pub fn run_traced(gen: &Generated, init: PDPoint, cfg: &SolverConfig) -> Result<(SolveReport, Trace)> {
    let cp = gen.instance.coupled();
    let mut trace = Trace::default();
    if let Some(cp) = cp {
        trace.block_labels = (1..=cp.m())
            .map(|i| format!("kt_res_x{i}"))
            .chain((1..=cp.k()).map(|k| format!("kt_res_v{k}")))
            .collect();
    }
    let start = Instant::now();
    let mut failure = None;
    let report = gen.instance.solve_observed(init, cfg, &mut |e| {
        let at = e.step.solution.as_ref().unwrap_or(&e.step.next);
        let dist_to_oracle = gen.oracle.as_ref().and_then(|z| at.dist(z).ok());
        let blocks = match cp {
            Some(cp) => match cp.split(at).and_then(|p| cp.kt_residuals(&p)) {
                Ok((x, v)) => x.into_iter().chain(v).collect(),
                Err(err) => {
                    failure.get_or_insert(err);
                    Vec::new()
                }
            },
            None => Vec::new(),
        };
        let d = &e.step.diag;
        trace.records.push(TraceRecord {
            n: e.n,
            tau: d.tau,
            theta: d.theta,
            delta: d.delta,
            s_norm: d.s_norm2.sqrt(),
            t_norm: d.t_norm2.sqrt(),
            kt_res: e.kt_residual,
            dist_to_oracle,
            wall_ns: start.elapsed().as_nanos() as u64,
            blocks,
        });
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    Ok((report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(n: usize, dist: Option<f64>, blocks: Vec<f64>) -> TraceRecord {
        TraceRecord {
            n,
            tau: 0.25,
            theta: 1.0 / 3.0,
            delta: 1e-300,
            s_norm: 0.5,
            t_norm: 0.0,
            kt_res: 2.0f64.sqrt(),
            dist_to_oracle: dist,
            wall_ns: 123,
            blocks,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        Trace::default().write(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,tau,theta,delta,s_norm,t_norm,kt_res,dist_to_oracle,wall_ns\n"
        );
    }

    #[test]
    fn seventeen_significant_digits_and_empty_oracle() {
        let t = Trace {
            block_labels: vec![],
            records: vec![record(0, None, vec![])],
        };
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(
            row,
            "0,2.5000000000000000e-1,3.3333333333333331e-1,1.0000000000000000e-300,\
             5.0000000000000000e-1,0.0000000000000000e0,1.4142135623730951e0,,123"
        );
    }

    #[test]
    fn block_columns_round_trip() {
        let t = Trace {
            block_labels: vec!["kt_res_x1".into(), "kt_res_v1".into()],
            records: vec![record(0, Some(1.5), vec![0.1, 0.2]), record(1, Some(0.7), vec![0.3, 0.4])],
        };
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(Trace::read(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn mismatched_blocks_and_bad_files_rejected() {
        let t = Trace {
            block_labels: vec!["kt_res_x1".into()],
            records: vec![record(0, None, vec![])],
        };
        assert!(t.write(Vec::new()).is_err());
        assert!(Trace::read("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "n,tau,theta,delta,s_norm,t_norm,kt_res,dist_to_oracle,wall_ns\n0,x,0,0,0,0,0,,1\n";
        assert!(matches!(Trace::read(bad.as_bytes()), Err(Error::Trace(_))));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            -1e3..1e3f64,
            Just(0.0),
        ]
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            rows in prop::collection::vec(
                (any::<u32>(), finite(), finite(), finite(), finite(), finite(), finite(),
                 prop::option::of(finite()), any::<u64>(), prop::collection::vec(finite(), 2)),
                0..20)
        ) {
            let records = rows
                .into_iter()
                .map(|(n, tau, theta, delta, s, t, kt, dist, wall, blocks)| TraceRecord {
                    n: n as usize, tau, theta, delta, s_norm: s, t_norm: t, kt_res: kt,
                    dist_to_oracle: dist, wall_ns: wall, blocks,
                })
                .collect();
            let trace = Trace { block_labels: vec!["kt_res_x1".into(), "kt_res_v1".into()], records };
            let mut buf = Vec::new();
            trace.write(&mut buf).unwrap();
            prop_assert_eq!(Trace::read(buf.as_slice()).unwrap(), trace);
        }
    }
}
