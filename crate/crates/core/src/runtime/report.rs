//! Run statistics and their delimited-text form.

use std::fmt::Write as _;
use std::path::Path;

use crate::advect::IntervalStats;
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.tsv";

const INTERVAL_HEADER: &str = "index\tfrom\tto\tseconds\talive\tadvected\texited\tinconsistent\tcorrected\tremaining\tvanished\tfeatures\tsplits\tseparation_meshes\tmessages\thandoffs";

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalReport {
    pub index: usize,
    pub from_time: f64,
    pub to_time: f64,
    /// Wall time for advection, labeling and separation surfaces.
    pub seconds: f64,
    /// Particles alive at the end of the interval.
    pub alive: usize,
    pub stats: IntervalStats,
    /// Features at the end of the interval.
    pub features: usize,
    pub splits: usize,
    pub separation_meshes: usize,
    pub messages: usize,
    pub handoffs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: String,
    pub particles: usize,
    pub alive: usize,
    pub initial_features: usize,
    pub final_features: usize,
    /// Wall time for the contribution table and the boundary meshes.
    pub boundary_seconds: f64,
    pub max_eps: f64,
    pub mean_eps: f64,
    /// Share of particles the corrector moved at least once.
    pub corrected_fraction: f64,
    pub boundary_meshes: usize,
    pub separation_meshes: usize,
    pub intervals: Vec<IntervalReport>,
}

impl RunReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("[summary]\n");
        let rows: [(&str, String); 11] = [
            ("mode", self.mode.clone()),
            ("particles", self.particles.to_string()),
            ("alive", self.alive.to_string()),
            ("initial_features", self.initial_features.to_string()),
            ("final_features", self.final_features.to_string()),
            ("boundary_seconds", self.boundary_seconds.to_string()),
            ("max_eps", self.max_eps.to_string()),
            ("mean_eps", self.mean_eps.to_string()),
            ("corrected_fraction", self.corrected_fraction.to_string()),
            ("boundary_meshes", self.boundary_meshes.to_string()),
            ("separation_meshes", self.separation_meshes.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s.push_str("\n[intervals]\n");
        s.push_str(INTERVAL_HEADER);
        s.push('\n');
        for i in &self.intervals {
            let st = &i.stats;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i.index,
                i.from_time,
                i.to_time,
                i.seconds,
                i.alive,
                st.advected,
                st.exited,
                st.inconsistent,
                st.corrected,
                st.remaining,
                st.vanished,
                i.features,
                i.splits,
                i.separation_meshes,
                i.messages,
                i.handoffs
            );
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "[summary]")) => {}
            _ => return Err(bad(1, "expected '[summary]'".into())),
        }
        let mut summary = std::collections::HashMap::new();
        for (n, line) in lines.by_ref() {
            if line.is_empty() {
                continue;
            }
            if line == "[intervals]" {
                break;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| bad(n, format!("expected key<TAB>value, found '{line}'")))?;
            summary.insert(k.to_string(), (n, v.to_string()));
        }
        fn field<T: std::str::FromStr>(
            summary: &std::collections::HashMap<String, (usize, String)>,
            key: &str,
            bad: &dyn Fn(usize, String) -> Error,
        ) -> Result<T> {
            let (n, v) = summary
                .get(key)
                .ok_or_else(|| bad(0, format!("missing summary field '{key}'")))?;
            v.parse().map_err(|_| bad(*n, format!("bad value '{v}' for '{key}'")))
        }
        match lines.next() {
            Some((_, h)) if h == INTERVAL_HEADER => {}
            other => return Err(bad(other.map_or(0, |o| o.0), "missing interval header".into())),
        }
        let mut intervals = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 16 {
                return Err(bad(n, format!("expected 16 columns, found {}", c.len())));
            }
            let u = |i: usize| c[i].parse::<usize>().map_err(|e| bad(n, format!("column {}: {e}", i + 1)));
            let f = |i: usize| c[i].parse::<f64>().map_err(|e| bad(n, format!("column {}: {e}", i + 1)));
            intervals.push(IntervalReport {
                index: u(0)?,
                from_time: f(1)?,
                to_time: f(2)?,
                seconds: f(3)?,
                alive: u(4)?,
                stats: IntervalStats {
                    advected: u(5)?,
                    exited: u(6)?,
                    inconsistent: u(7)?,
                    corrected: u(8)?,
                    remaining: u(9)?,
                    vanished: u(10)?,
                },
                features: u(11)?,
                splits: u(12)?,
                separation_meshes: u(13)?,
                messages: u(14)?,
                handoffs: u(15)?,
            });
        }
        Ok(Self {
            mode: field(&summary, "mode", &bad)?,
            particles: field(&summary, "particles", &bad)?,
            alive: field(&summary, "alive", &bad)?,
            initial_features: field(&summary, "initial_features", &bad)?,
            final_features: field(&summary, "final_features", &bad)?,
            boundary_seconds: field(&summary, "boundary_seconds", &bad)?,
            max_eps: field(&summary, "max_eps", &bad)?,
            mean_eps: field(&summary, "mean_eps", &bad)?,
            corrected_fraction: field(&summary, "corrected_fraction", &bad)?,
            boundary_meshes: field(&summary, "boundary_meshes", &bad)?,
            separation_meshes: field(&summary, "separation_meshes", &bad)?,
            intervals,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let r = RunReport {
            mode: "partitioned 2x1x1".into(),
            particles: 10,
            alive: 9,
            initial_features: 1,
            final_features: 2,
            boundary_seconds: 0.125,
            max_eps: 0.5,
            mean_eps: 0.05,
            corrected_fraction: 0.1,
            boundary_meshes: 2,
            separation_meshes: 1,
            intervals: vec![IntervalReport {
                index: 0,
                from_time: 0.0,
                to_time: 0.5,
                seconds: 0.01,
                alive: 9,
                stats: IntervalStats {
                    advected: 10,
                    exited: 1,
                    inconsistent: 3,
                    corrected: 3,
                    remaining: 0,
                    vanished: 0,
                },
                features: 2,
                splits: 1,
                separation_meshes: 1,
                messages: 7,
                handoffs: 2,
            }],
        };
        let text = r.to_tsv();
        assert!(text.starts_with("[summary]\nmode\tpartitioned 2x1x1\n"));
        assert_eq!(RunReport::parse(&text, Path::new("r")).unwrap(), r);
    }

    #[test]
    fn truncated_report_is_rejected() {
        assert!(RunReport::parse("[summary]\nmode\tserial\n", Path::new("r")).is_err());
        assert!(RunReport::parse("", Path::new("r")).is_err());
    }
}
