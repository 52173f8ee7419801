//! Run counters, packet reception ratio and CSV results.

use std::io::Write;

use crate::error::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub generated: u64,
    pub sent: u64,
    pub suppressed: u64,
    pub received: u64,
    pub collided: u64,
    pub under_sensitivity: u64,
    pub no_path: u64,
    /// Packets still waiting to reclaim the channel when the run ended.
    pub pending_at_end: u64,
}

impl Counters {
    pub fn outcomes(&self) -> u64 {
        self.received + self.collided + self.under_sensitivity + self.no_path
    }

    /// Both conservation identities.
    pub fn check(&self) -> Result<(), MetricsError> {
        if self.outcomes() != self.sent {
            return Err(MetricsError::Inconsistent(format!(
                "sent {} != received {} + collided {} + under_sensitivity {} + no_path {}",
                self.sent, self.received, self.collided, self.under_sensitivity, self.no_path
            )));
        }
        if self.sent + self.suppressed + self.pending_at_end != self.generated {
            return Err(MetricsError::Inconsistent(format!(
                "generated {} != sent {} + suppressed {} + pending {}",
                self.generated, self.sent, self.suppressed, self.pending_at_end
            )));
        }
        Ok(())
    }
}

/// `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prr {
    pub generated: Option<f64>,
    pub sent: Option<f64>,
}

pub fn compute_prr(c: &Counters) -> Result<Prr, MetricsError> {
    if c.received > c.sent || c.sent > c.generated {
        return Err(MetricsError::Inconsistent(format!(
            "received {} <= sent {} <= generated {} violated",
            c.received, c.sent, c.generated
        )));
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(Prr {
        generated: ratio(c.received, c.generated),
        sent: ratio(c.received, c.sent),
    })
}

pub const CSV_COLUMNS: [&str; 17] = [
    "scenario",
    "seed",
    "mac",
    "n_devices",
    "sf_set",
    "p",
    "n_areas",
    "period_set",
    "generated",
    "sent",
    "suppressed",
    "received",
    "collided",
    "under_sensitivity",
    "no_path",
    "prr_generated",
    "prr_sent",
];

/// Seed column of a result row: a run, or a per-cell summary statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowKind {
    Run(u64),
    Mean,
    Std,
}

impl RowKind {
    fn label(self) -> String {
        match self {
            RowKind::Run(seed) => seed.to_string(),
            RowKind::Mean => "mean".into(),
            RowKind::Std => "std".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub kind: RowKind,
    pub mac: String,
    pub n_devices: usize,
    /// Semicolon-joined, e.g. `8;9;10`.
    pub sf_set: String,
    /// `None` for per-device persistence tables.
    pub p: Option<f64>,
    pub n_areas: usize,
    pub period_set: String,
    /// Absent on summary rows.
    pub counters: Option<Counters>,
    pub prr_generated: Option<f64>,
    pub prr_sent: Option<f64>,
}

fn real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ResultRow {
    fn fields(&self) -> Vec<String> {
        let count =
            |f: fn(&Counters) -> u64| self.counters.map(|c| f(&c).to_string()).unwrap_or_default();
        vec![
            self.scenario.clone(),
            self.kind.label(),
            self.mac.clone(),
            self.n_devices.to_string(),
            self.sf_set.clone(),
            self.p
                .map(|p| format!("{p:.6}"))
                .unwrap_or_else(|| "per-device".into()),
            self.n_areas.to_string(),
            self.period_set.clone(),
            count(|c| c.generated),
            count(|c| c.sent),
            count(|c| c.suppressed),
            count(|c| c.received),
            count(|c| c.collided),
            count(|c| c.under_sensitivity),
            count(|c| c.no_path),
            real(self.prr_generated),
            real(self.prr_sent),
        ]
    }
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// Rows are written sorted by scenario, then seed (runs before summaries).
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> std::io::Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.kind.cmp(&b.kind)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in sorted {
        w.write_record(row.fields())?;
    }
    w.flush()
}

/// Mean and sample standard deviation; `None` for an empty sample.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counters(generated: u64, sent: u64, received: u64) -> Counters {
        Counters {
            generated,
            sent,
            received,
            collided: sent - received,
            suppressed: generated - sent,
            ..Counters::default()
        }
    }

    #[test]
    fn prr_arithmetic() {
        let p = compute_prr(&counters(36, 36, 36)).unwrap();
        assert_eq!(p.generated, Some(1.0));
        let p = compute_prr(&counters(40, 36, 18)).unwrap();
        assert_eq!(p.sent, Some(0.5));
        assert_eq!(p.generated, Some(0.45));
        let p = compute_prr(&Counters::default()).unwrap();
        assert_eq!(p.generated, None);
        assert_eq!(p.sent, None);
        let bad = Counters {
            received: 5,
            sent: 3,
            generated: 10,
            ..Counters::default()
        };
        assert!(compute_prr(&bad).is_err());
    }

    #[test]
    fn conservation_check() {
        assert!(counters(40, 36, 18).check().is_ok());
        let mut c = counters(40, 36, 18);
        c.collided += 1;
        assert!(c.check().is_err());
        let mut c = counters(40, 36, 18);
        c.pending_at_end = 1;
        assert!(c.check().is_err());
    }

    fn row(scenario: &str, kind: RowKind) -> ResultRow {
        ResultRow {
            scenario: scenario.into(),
            kind,
            mac: "pcsma".into(),
            n_devices: 1,
            sf_set: "8".into(),
            p: Some(1.0),
            n_areas: 1,
            period_set: "100".into(),
            counters: Some(counters(36, 36, 36)),
            prr_generated: Some(1.0),
            prr_sent: Some(1.0),
        }
    }

    #[test]
    fn header_only_for_no_rows() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            CSV_COLUMNS.join(",") + "\n"
        );
    }

    #[test]
    fn rows_are_sorted_and_formatted() {
        let mut summary = row("a", RowKind::Mean);
        summary.counters = None;
        summary.prr_sent = None;
        let rows = vec![
            row("b", RowKind::Run(1)),
            summary,
            row("a", RowKind::Run(10)),
            row("a", RowKind::Run(2)),
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[1],
            "a,2,pcsma,1,8,1.000000,1,100,36,36,0,36,0,0,0,1.000000,1.000000"
        );
        assert!(lines[2].starts_with("a,10,"));
        assert_eq!(lines[3], "a,mean,pcsma,1,8,1.000000,1,100,,,,,,,,1.000000,");
        assert!(lines[4].starts_with("b,1,"));
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
