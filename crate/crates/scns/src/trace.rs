//! Trace CSV, run metadata, and gnuplot-ready plot data.
//!
//! A trace replays the full story of a run: one row per output stride
//! with the working norms, the cut-off value, the dissipation
//! accumulator, and an event column that carries stopping crossings
//! inline rather than in a side channel.

use crate::config::RunConfig;
use crate::constants::CONSTANTS_VERSION;
use crate::diagnostics::CauchyTable;
use crate::integrator::TraceRow;
use crate::stopping::{StoppingRecord, Threshold};
use crate::streams::RNG_ALGORITHM;
use crate::{Error, Result};

pub const TRACE_HEADER: &str = "t,r_s2,u_s2,u_w2inf,min_r,phi,dissipation,event";
pub const CAUCHY_HEADER: &str = "coarse,fine,epsilon,exceedance,mean_sup_distance";

/// Event column of one row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    None,
    Crossing(Threshold),
    /// A continuation level announced its blow-up certificate.
    BlowupLevel,
}

impl std::fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TraceEvent::None => f.write_str("none"),
            TraceEvent::Crossing(t) => write!(f, "{t}"),
            TraceEvent::BlowupLevel => f.write_str("blowup_level"),
        }
    }
}

impl TraceEvent {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "none" => TraceEvent::None,
            "tau_R" => TraceEvent::Crossing(Threshold::TauR),
            "tau1_K" => TraceEvent::Crossing(Threshold::Tau1K),
            "tau2_K" => TraceEvent::Crossing(Threshold::Tau2K),
            "tau3_K" => TraceEvent::Crossing(Threshold::Tau3K),
            "blowup_level" => TraceEvent::BlowupLevel,
            other => {
                return Err(Error::Protocol(format!("unknown trace event `{other}`")));
            }
        })
    }
}

/// One parsed or to-be-written CSV row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceLine {
    pub t: f64,
    pub r_s2: f64,
    pub u_s2: f64,
    pub u_w2inf: f64,
    pub min_r: f64,
    pub phi: f64,
    pub dissipation: f64,
    pub event: TraceEvent,
}

impl From<&TraceRow> for TraceLine {
    fn from(row: &TraceRow) -> Self {
        Self {
            t: row.sample.t,
            r_s2: row.sample.r_s2,
            u_s2: row.sample.u_s2,
            u_w2inf: row.sample.u_w2inf,
            min_r: row.sample.min_r,
            phi: row.phi,
            dissipation: row.dissipation,
            event: match row.event {
                Some(t) => TraceEvent::Crossing(t),
                None => TraceEvent::None,
            },
        }
    }
}

fn quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Split one CSV record, honoring RFC-4180 quoting.
fn split_record(line: &str) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        cur.push('"');
                    } else {
                        quoted = false;
                    }
                }
                _ => cur.push(c),
            }
        } else {
            match c {
                '"' if cur.is_empty() => quoted = true,
                ',' => {
                    fields.push(std::mem::take(&mut cur));
                }
                _ => cur.push(c),
            }
        }
    }
    if quoted {
        return Err(Error::Protocol(format!("unterminated quote in `{line}`")));
    }
    fields.push(cur);
    Ok(fields)
}

/// Render rows to CSV; rows must be strictly increasing in time.
pub fn render_trace(lines: &[TraceLine]) -> Result<String> {
    for w in lines.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::Protocol(format!(
                "trace rows not strictly increasing in t: {} then {}",
                w[0].t, w[1].t
            )));
        }
    }
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for l in lines {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            l.t,
            l.r_s2,
            l.u_s2,
            l.u_w2inf,
            l.min_r,
            l.phi,
            l.dissipation,
            quote(&l.event.to_string())
        ));
    }
    Ok(out)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(Error::Protocol(format!(
                "bad trace header: {:?}",
                other.unwrap_or("")
            )));
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields = split_record(line)?;
        if fields.len() != 8 {
            return Err(Error::Protocol(format!(
                "expected 8 columns, got {} in `{line}`",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Protocol(format!("bad number `{}` in `{line}`", fields[i])))
        };
        out.push(TraceLine {
            t: num(0)?,
            r_s2: num(1)?,
            u_s2: num(2)?,
            u_w2inf: num(3)?,
            min_r: num(4)?,
            phi: num(5)?,
            dissipation: num(6)?,
            event: TraceEvent::parse(&fields[7])?,
        });
    }
    Ok(out)
}

/// Build identifier baked in at compile time (git describe, or a fixed
/// token outside a work tree).
pub fn build_id() -> &'static str {
    option_env!("SCNS_BUILD_ID").unwrap_or("untracked")
}

/// Metadata: echo of the config, the determinism contract (seed is part
/// of the config echo), and the stopping record when one exists.
pub fn render_metadata(
    cfg: &RunConfig,
    stopping: Option<&StoppingRecord>,
    extras: &[(String, String)],
) -> String {
    let mut out = cfg.render();
    out.push_str(&format!("rng = {RNG_ALGORITHM}\n"));
    out.push_str(&format!("constants_version = {CONSTANTS_VERSION}\n"));
    out.push_str(&format!("build = {}\n", build_id()));
    if let Some(rec) = stopping {
        out.push_str(&format!("stopping.horizon = {}\n", rec.horizon));
        out.push_str(&format!("stopping.tau_r = {}\n", rec.tau_r));
        out.push_str(&format!("stopping.tau1_k = {}\n", rec.tau1_k));
        out.push_str(&format!("stopping.tau2_k = {}\n", rec.tau2_k));
        out.push_str(&format!("stopping.tau3_k = {}\n", rec.tau3_k));
        out.push_str(&format!(
            "stopping.triggered = {}\n",
            rec.triggered
                .map(|t| t.to_string())
                .unwrap_or_else(|| "none".into())
        ));
        out.push_str(&format!("stopping.blow_up = {}\n", rec.blow_up));
    }
    for (k, v) in extras {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// Cauchy experiment table as CSV, one row per (level pair, epsilon).
pub fn render_cauchy_csv(table: &CauchyTable) -> String {
    let mut out = String::from(CAUCHY_HEADER);
    out.push('\n');
    for row in &table.rows {
        let dist = table
            .mean_sup_distance
            .iter()
            .find(|(c, f, _)| *c == row.level_coarse && *f == row.level_fine)
            .map(|(_, _, d)| *d)
            .unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.level_coarse, row.level_fine, row.epsilon, row.exceedance, dist
        ));
    }
    out
}

/// Parsed row of the cauchy CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauchyCsvRow {
    pub coarse: usize,
    pub fine: usize,
    pub epsilon: f64,
    pub exceedance: f64,
    pub mean_sup_distance: f64,
}

pub fn parse_cauchy_csv(text: &str) -> Result<Vec<CauchyCsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CAUCHY_HEADER => {}
        other => {
            return Err(Error::Protocol(format!(
                "bad cauchy header: {:?}",
                other.unwrap_or("")
            )));
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields = split_record(line)?;
        if fields.len() != 5 {
            return Err(Error::Protocol(format!("expected 5 columns in `{line}`")));
        }
        let bad = |i: usize| Error::Protocol(format!("bad value `{}` in `{line}`", fields[i]));
        out.push(CauchyCsvRow {
            coarse: fields[0].parse().map_err(|_| bad(0))?,
            fine: fields[1].parse().map_err(|_| bad(1))?,
            epsilon: fields[2].parse().map_err(|_| bad(2))?,
            exceedance: fields[3].parse().map_err(|_| bad(3))?,
            mean_sup_distance: fields[4].parse().map_err(|_| bad(4))?,
        });
    }
    Ok(out)
}

/// Plot data for a single-run trace: `(t, |u|_{s,2}, min r, phi)`
/// aligned row-for-row with the source, plus a column sidecar.
pub fn plot_single(lines: &[TraceLine]) -> (String, String) {
    let mut dat = String::from("# t u_s2 min_r phi\n");
    for l in lines {
        dat.push_str(&format!("{} {} {} {}\n", l.t, l.u_s2, l.min_r, l.phi));
    }
    let sidecar = "\
columns of the accompanying .dat file (whitespace-separated):
  1  t       trace time
  2  u_s2    Sobolev norm |u|_(s,2)
  3  min_r   nodal minimum of r
  4  phi     cut-off value phi_R(|u|_(2,inf)) at the pre-step state
"
    .to_string();
    (dat, sidecar)
}

/// Plot data for a cauchy table: long-format `(n, epsilon, exceedance)`
/// triples, `n` being the coarser level of each adjacent pair.
pub fn plot_cauchy(rows: &[CauchyCsvRow]) -> (String, String) {
    let mut dat = String::from("# n epsilon exceedance\n");
    for r in rows {
        dat.push_str(&format!("{} {} {}\n", r.coarse, r.epsilon, r.exceedance));
    }
    let sidecar = "\
columns of the accompanying .dat file (whitespace-separated):
  1  n           coarser Galerkin level of the adjacent pair (n, 2n)
  2  epsilon     distance threshold
  3  exceedance  fraction of paths with sup_t |u_n - u_2n|_2 > epsilon
"
    .to_string();
    (dat, sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines() -> Vec<TraceLine> {
        vec![
            TraceLine {
                t: 0.0,
                r_s2: 2.0,
                u_s2: 0.1,
                u_w2inf: 0.3,
                min_r: 1.9,
                phi: 1.0,
                dissipation: 0.0,
                event: TraceEvent::None,
            },
            TraceLine {
                t: 0.01,
                r_s2: 2.1,
                u_s2: 0.2,
                u_w2inf: 0.4,
                min_r: 1.8,
                phi: 1.0,
                dissipation: 0.005,
                event: TraceEvent::Crossing(Threshold::TauR),
            },
            TraceLine {
                t: 0.02,
                r_s2: 2.2,
                u_s2: 0.3,
                u_w2inf: 0.5,
                min_r: 1.7,
                phi: 0.5,
                dissipation: 0.01,
                event: TraceEvent::BlowupLevel,
            },
        ]
    }

    #[test]
    fn header_matches_the_column_contract() {
        let text = render_trace(&lines()).unwrap();
        assert!(text.starts_with("t,r_s2,u_s2,u_w2inf,min_r,phi,dissipation,event\n"));
    }

    #[test]
    fn csv_roundtrip_preserves_rows_exactly() {
        let src = lines();
        let parsed = parse_trace(&render_trace(&src).unwrap()).unwrap();
        assert_eq!(parsed, src);
    }

    #[test]
    fn nonincreasing_time_is_rejected() {
        let mut src = lines();
        src[2].t = src[1].t;
        assert!(matches!(render_trace(&src), Err(Error::Protocol(_))));
    }

    #[test]
    fn quoted_fields_parse() {
        let text = format!("{TRACE_HEADER}\n\"0\",1,2,3,4,5,6,\"tau1_K\"\n");
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed[0].event, TraceEvent::Crossing(Threshold::Tau1K));
        assert_eq!(parsed[0].t, 0.0);
    }

    #[test]
    fn unknown_event_is_rejected() {
        let text = format!("{TRACE_HEADER}\n0,1,2,3,4,5,6,kaboom\n");
        assert!(parse_trace(&text).is_err());
    }

    #[test]
    fn quote_escapes_embedded_quotes() {
        assert_eq!(quote("a\"b"), "\"a\"\"b\"");
        assert_eq!(quote("plain"), "plain");
        let rec = split_record("\"a\"\"b\",c").unwrap();
        assert_eq!(rec, vec!["a\"b".to_string(), "c".to_string()]);
    }

    #[test]
    fn single_plot_projects_the_trace() {
        let src = lines();
        let (dat, sidecar) = plot_single(&src);
        let rows: Vec<&str> = dat.lines().collect();
        assert_eq!(rows.len(), src.len() + 1);
        assert_eq!(rows[1], "0 0.1 1.9 1");
        assert!(sidecar.contains("min_r"));
    }

    #[test]
    fn empty_trace_plots_header_only() {
        let (dat, _) = plot_single(&[]);
        assert_eq!(dat, "# t u_s2 min_r phi\n");
    }

    #[test]
    fn cauchy_plot_reshapes_exactly() {
        let csv = format!("{CAUCHY_HEADER}\n8,16,0.01,0.3,0.02\n16,32,0.01,0.1,0.004\n");
        let rows = parse_cauchy_csv(&csv).unwrap();
        let (dat, _) = plot_cauchy(&rows);
        assert_eq!(dat, "# n epsilon exceedance\n8 0.01 0.3\n16 0.01 0.1\n");
    }

    #[test]
    fn metadata_carries_contract_lines() {
        let cfg = RunConfig::default();
        let rec = StoppingRecord {
            triggered: Some(Threshold::Tau2K),
            ..StoppingRecord::untriggered(0.5)
        };
        let text = render_metadata(&cfg, Some(&rec), &[("paths".into(), "50".into())]);
        assert!(text.contains(&format!("rng = {RNG_ALGORITHM}\n")));
        assert!(text.contains(&format!("constants_version = {CONSTANTS_VERSION}\n")));
        assert!(text.contains("build = "));
        assert!(text.contains("stopping.triggered = tau2_K\n"));
        assert!(text.contains("seed = 0\n"));
        assert!(text.contains("paths = 50\n"));
    }
}
