//! FCC run statistics, change rate and detection error P_E, plus the
//! per-method comparison report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::ModificationMap;
use crate::simulator::change_rate;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FCC_ORDERS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run order {n} needs 2 <= n and n + 1 <= {limit}")]
    OrderOutOfRange { n: usize, limit: usize },
    #[error("P_E needs nonempty cover and stego score lists")]
    EmptyScores,
}

/// Fraction of length-(n+1) windows along `axis` whose cells all equal `k`.
fn runs(mods: &ModificationMap, n: usize, k: i8, vertical: bool) -> f64 {
    let (w, h) = (mods.width(), mods.height());
    let (lines, along) = if vertical { (w, h) } else { (h, w) };
    let e = mods.entries();
    let at = |line: usize, pos: usize| if vertical { e[pos * w + line] } else { e[line * w + pos] };
    let windows = along - n;
    let mut hits = 0usize;
    for line in 0..lines {
        // Length of the current run of k ending at pos.
        let mut run = 0usize;
        for pos in 0..along {
            run = if at(line, pos) == k { run + 1 } else { 0 };
            if run > n {
                hits += 1;
            }
        }
    }
    hits as f64 / (lines * windows) as f64
}

/// F(n): mean over both directions and both polarities of the frequency of
/// n+1 consecutive identical modifications.
pub fn fcc(mods: &ModificationMap, n: usize) -> Result<f64, MetricsError> {
    let limit = mods.width().min(mods.height());
    if n < 2 || n + 1 > limit {
        return Err(MetricsError::OrderOutOfRange { n, limit });
    }
    let total: f64 = [(1, false), (-1, false), (1, true), (-1, true)]
        .iter()
        .map(|&(k, vertical)| runs(mods, n, k, vertical))
        .sum();
    Ok(total / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FccReport {
    pub orders: BTreeMap<usize, f64>,
    pub change_rate: f64,
}

pub fn fcc_report(mods: &ModificationMap, orders: &[usize]) -> Result<FccReport, MetricsError> {
    let orders = orders.iter().map(|&n| fcc(mods, n).map(|f| (n, f))).collect::<Result<_, _>>()?;
    Ok(FccReport { orders, change_rate: change_rate(mods) })
}

/// Minimum over thresholds of (P_FA + P_MD) / 2. Higher scores mean "stego";
/// an input is flagged when its score is at least the threshold.
pub fn p_e(scores_cover: &[f64], scores_stego: &[f64]) -> Result<f64, MetricsError> {
    if scores_cover.is_empty() || scores_stego.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let mut covers = scores_cover.to_vec();
    let mut stegos = scores_stego.to_vec();
    covers.sort_by(f64::total_cmp);
    stegos.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = covers.iter().chain(&stegos).copied().collect();
    thresholds.push(f64::INFINITY);
    let (nc, ns) = (covers.len() as f64, stegos.len() as f64);
    let best = thresholds
        .iter()
        .map(|&t| {
            let false_alarm = (covers.len() - covers.partition_point(|&s| s < t)) as f64 / nc;
            let missed = stegos.partition_point(|&s| s < t) as f64 / ns;
            0.5 * (false_alarm + missed)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// Aggregate statistics of one embedding method over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub images: usize,
    pub mean_change_rate: f64,
    pub mean_fcc: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_e: Option<f64>,
}

impl MethodRow {
    pub fn from_maps(method: &str, maps: &[ModificationMap], orders: &[usize]) -> Result<Self, MetricsError> {
        let mut mean_fcc: BTreeMap<usize, f64> = orders.iter().map(|&n| (n, 0.0)).collect();
        let mut mean_change_rate = 0.0;
        for m in maps {
            let r = fcc_report(m, orders)?;
            mean_change_rate += r.change_rate;
            for (n, f) in r.orders {
                *mean_fcc.get_mut(&n).expect("order listed") += f;
            }
        }
        if !maps.is_empty() {
            let k = maps.len() as f64;
            mean_change_rate /= k;
            mean_fcc.values_mut().for_each(|v| *v /= k);
        }
        Ok(Self { method: method.to_string(), images: maps.len(), mean_change_rate, mean_fcc, p_e: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<MethodRow>,
}

impl Default for Report {
    fn default() -> Self {
        Self { schema_version: REPORT_SCHEMA_VERSION, rows: Vec::new() }
    }
}

impl Report {
    pub fn push(&mut self, row: MethodRow) {
        self.rows.push(row);
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Whether `adjusted` shows more F(2) clustering than `baseline`.
    pub fn fcc_direction(&self, adjusted: &str, baseline: &str) -> Option<bool> {
        let a = self.row(adjusted)?.mean_fcc.get(&2)?;
        let b = self.row(baseline)?.mean_fcc.get(&2)?;
        Some(a > b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let orders: Vec<usize> = {
            let mut o: Vec<usize> = self.rows.iter().flat_map(|r| r.mean_fcc.keys().copied()).collect();
            o.sort_unstable();
            o.dedup();
            o
        };
        let mut header = vec!["method".to_string(), "images".into(), "change rate".into()];
        header.extend(orders.iter().map(|n| format!("F({n})")));
        header.push("P_E".into());
        let mut table = vec![header];
        for r in &self.rows {
            let mut line = vec![r.method.clone(), r.images.to_string(), format!("{:.3}%", 100.0 * r.mean_change_rate)];
            line.extend(orders.iter().map(|n| {
                r.mean_fcc.get(n).map_or("-".to_string(), |f| format!("{:.3}%", 100.0 * f))
            }));
            line.push(r.p_e.map_or("-".to_string(), |p| format!("{p:.4}")));
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Window-scanning oracle following the definition literally.
    fn oracle(mods: &ModificationMap, n: usize) -> f64 {
        let (n1, n2) = (mods.height(), mods.width());
        let d = |i: usize, j: usize| mods.get(i, j);
        let mut total = 0.0;
        for k in [1i8, -1] {
            let mut h = 0.0;
            for i in 0..n1 {
                for j in 0..n2 - n {
                    if (0..=n).all(|m| d(i, j + m) == k) {
                        h += 1.0;
                    }
                }
            }
            total += h / (n1 * (n2 - n)) as f64;
            let mut v = 0.0;
            for j in 0..n2 {
                for i in 0..n1 - n {
                    if (0..=n).all(|m| d(i + m, j) == k) {
                        v += 1.0;
                    }
                }
            }
            total += v / (n2 * (n1 - n)) as f64;
        }
        total / 4.0
    }

    fn ternary(w: usize, h: usize) -> impl Strategy<Value = ModificationMap> {
        prop::collection::vec(-1i8..=1, w * h).prop_map(move |e| ModificationMap::new(w, h, e).unwrap())
    }

    #[test]
    fn saturated_maps() {
        let zero = ModificationMap::zeros(6, 6);
        let plus = ModificationMap::new(6, 6, vec![1; 36]).unwrap();
        for n in 2..=4 {
            assert_eq!(fcc(&zero, n).unwrap(), 0.0);
            assert_eq!(fcc(&plus, n).unwrap(), 0.5);
        }
        assert!(fcc(&zero, 1).is_err());
        assert!(fcc(&zero, 6).is_err());
        assert!(fcc(&zero, 5).is_ok());
    }

    proptest! {
        #[test]
        fn matches_window_oracle(m in ternary(16, 16), n in 2usize..=4) {
            prop_assert!((fcc(&m, n).unwrap() - oracle(&m, n)).abs() < 1e-15);
        }

        #[test]
        fn oracle_holds_on_rectangles(m in ternary(9, 6), n in 2usize..=4) {
            prop_assert!((fcc(&m, n).unwrap() - oracle(&m, n)).abs() < 1e-15);
        }

        #[test]
        fn symmetric_under_transpose_and_flip(m in ternary(11, 7), n in 2usize..=4) {
            let f = fcc(&m, n).unwrap();
            prop_assert!((fcc(&m.transposed(), n).unwrap() - f).abs() < 1e-15);
            prop_assert!((fcc(&m.negated(), n).unwrap() - f).abs() < 1e-15);
        }

        #[test]
        fn nonincreasing_in_order(m in prop::collection::vec(prop::sample::select(vec![-1i8, 1, 1, 1, 0]), 100)) {
            let m = ModificationMap::new(10, 10, m).unwrap();
            let f: Vec<f64> = (2..=4).map(|n| fcc(&m, n).unwrap()).collect();
            prop_assert!(f[0] >= f[1] && f[1] >= f[2]);
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn p_e_bounded_and_order_invariant(
            c in prop::collection::vec(0.0f64..1.0, 1..30),
            s in prop::collection::vec(0.0f64..1.0, 1..30),
        ) {
            let p = p_e(&c, &s).unwrap();
            prop_assert!((0.0..=0.5).contains(&p));
            let warp = |v: &f64| v.powi(3) * 7.0 + 1.0;
            let p2 = p_e(&c.iter().map(warp).collect::<Vec<_>>(), &s.iter().map(warp).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(p, p2);
        }
    }

    #[test]
    fn p_e_examples() {
        assert_eq!(p_e(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(p_e(&[0.3, 0.6, 0.9], &[0.3, 0.6, 0.9]).unwrap(), 0.5);
        let p = p_e(&[0.1, 0.2, 0.9], &[0.8, 0.85, 0.95]).unwrap();
        assert!((p - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(p_e(&[], &[0.1]), Err(MetricsError::EmptyScores));
    }

    #[test]
    fn report_rows_and_rendering() {
        let empty = Report::default();
        assert!(empty.rows.is_empty());
        assert_eq!(empty.to_text().lines().count(), 1);

        let a = ModificationMap::new(4, 4, vec![1; 16]).unwrap();
        let b = ModificationMap::zeros(4, 4);
        let mut report = Report::default();
        report.push(MethodRow::from_maps("mctsteg", &[a.clone(), a], &DEFAULT_FCC_ORDERS[..2]).unwrap());
        let mut plain = MethodRow::from_maps("plain", &[b], &DEFAULT_FCC_ORDERS[..2]).unwrap();
        plain.p_e = Some(0.25);
        report.push(plain);
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.fcc_direction("mctsteg", "plain"), Some(true));
        assert_eq!(report.fcc_direction("mctsteg", "cmd"), None);

        let text = report.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("F(2)") && text.contains("0.2500"));
        let back: Report = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.schema_version, REPORT_SCHEMA_VERSION);
    }
}
