//! Fixed-width text tables and their reader, plus the tables the CLI emits.
//!
//! Cells are separated by at least two spaces and never contain two spaces
//! in a row; empty cells print as `---`. Lines starting with `#` are notes and
//! a line of dashes separates the header from the body.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rust_decimal::Decimal;

use crate::econometrics::{stars, term_hour, FitResult, INTERCEPT};
use crate::error::{Error, Result};
use crate::fixed::round_usd;
use crate::metrics::{FirmScorecard, ScorecardSet, WeekdayWeekendOutcome};
use crate::scheduler::{ForwardCurve, Regime};

pub const EMPTY_CELL: &str = "---";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TextTable {
    pub notes: Vec<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn clean(cell: &str) -> String {
    let t = cell.trim();
    if t.is_empty() {
        return EMPTY_CELL.to_string();
    }
    // collapse internal whitespace runs so the separator stays unambiguous
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl TextTable {
    pub fn new<S: AsRef<str>>(headers: &[S]) -> TextTable {
        TextTable {
            notes: Vec::new(),
            headers: headers.iter().map(|h| clean(h.as_ref())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row.iter().map(|c| clean(c)).collect());
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn render(&self) -> String {
        let ncol = self.headers.len();
        let mut width = vec![0usize; ncol];
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            let mut s = String::new();
            for (j, (c, w)) in row.iter().zip(&width).enumerate() {
                if j == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "{}", line(&self.headers));
        let total: usize = width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1);
        let _ = writeln!(out, "{}", "-".repeat(total));
        for r in &self.rows {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }

    pub fn parse(text: &str) -> Result<TextTable> {
        let mut table = TextTable::default();
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            if let Some(n) = raw.strip_prefix("# ") {
                table.notes.push(n.to_string());
                continue;
            }
            if raw.trim().is_empty() || raw.chars().all(|c| c == '-') {
                continue;
            }
            let cells = split_cells(raw);
            if !header_seen {
                table.headers = cells;
                header_seen = true;
            } else {
                if cells.len() != table.headers.len() {
                    return Err(Error::data(format!(
                        "table line {}: {} cells, header has {}",
                        i + 1,
                        cells.len(),
                        table.headers.len()
                    )));
                }
                table.rows.push(cells);
            }
        }
        if !header_seen {
            return Err(Error::data("table has no header line"));
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Splits on runs of two or more spaces.
fn split_cells(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut spaces = 0;
    for ch in line.trim().chars() {
        if ch == ' ' {
            spaces += 1;
            continue;
        }
        if spaces >= 2 {
            cells.push(std::mem::take(&mut cur));
        } else if spaces == 1 {
            cur.push(' ');
        }
        spaces = 0;
        cur.push(ch);
    }
    cells.push(cur);
    cells
}

pub fn fmt_opt(v: Option<f64>, dp: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.dp$}"),
        _ => EMPTY_CELL.to_string(),
    }
}

pub fn fmt_signed(v: Option<f64>, dp: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:+.dp$}"),
        _ => EMPTY_CELL.to_string(),
    }
}

fn fmt_dec(d: Decimal, dp: u32) -> String {
    let r = round_usd(d).round_dp(dp);
    format!("{r:.prec$}", prec = dp as usize)
}

fn term_label(term: &str) -> String {
    if term == INTERCEPT {
        "alpha (const)".into()
    } else if let Some(h) = term_hour(term) {
        format!("hour {h}")
    } else if term == "phi_br" || term == "phi_s" {
        format!("delta ({term})")
    } else {
        term.to_string()
    }
}

/// Sort key placing hour rows first, then the congestion term, the
/// intercept, and fixed effects.
fn term_rank(term: &str) -> (u8, u32, String) {
    if let Some(h) = term_hour(term) {
        (0, h as u32, String::new())
    } else if term == "phi_br" || term == "phi_s" {
        (1, 0, term.into())
    } else if term == INTERCEPT {
        (2, 0, String::new())
    } else {
        (3, 0, term.into())
    }
}

/// Side-by-side coefficient table, one coefficient/t/stars column triple per
/// fit. Hours absent from a fit print as `---`.
pub fn coefficient_table(fits: &[(&str, &FitResult)]) -> TextTable {
    let mut headers = vec!["term".to_string()];
    for (name, _) in fits {
        headers.push(format!("{name} coef"));
        headers.push(format!("{name} t"));
        headers.push(format!("{name} sig"));
    }
    let mut table = TextTable::new(&headers);
    table.note("HC3 standard errors; *** p<0.001, ** p<0.01, * p<0.05");
    let mut terms: Vec<String> = Vec::new();
    for (_, f) in fits {
        for t in f.terms.iter().map(|t| &t.term).chain(&f.dropped_terms) {
            if !terms.contains(t) {
                terms.push(t.clone());
            }
        }
    }
    terms.sort_by_key(|t| term_rank(t));
    for term in &terms {
        let mut row = vec![term_label(term)];
        for (_, f) in fits {
            match f.term(term) {
                Some(e) => {
                    row.push(format!("{:.4}", e.coef));
                    row.push(fmt_opt(e.t, 3));
                    row.push(match stars(e.p_value) {
                        "" => EMPTY_CELL.to_string(),
                        s => s.to_string(),
                    });
                }
                None => row.extend([EMPTY_CELL.to_string(), EMPTY_CELL.to_string(), EMPTY_CELL.to_string()]),
            }
        }
        table.push(row);
    }
    let mut r2 = vec!["Adj. R2".to_string()];
    let mut n = vec!["N".to_string()];
    for (_, f) in fits {
        r2.extend([fmt_opt(f.adj_r2, 4), EMPTY_CELL.into(), EMPTY_CELL.into()]);
        n.extend([f.n.to_string(), EMPTY_CELL.into(), EMPTY_CELL.into()]);
    }
    table.push(r2);
    table.push(n);
    table
}

/// One column per firm: coefficient with stars appended.
pub fn firm_coefficient_table(fits: &BTreeMap<String, std::result::Result<FitResult, String>>) -> TextTable {
    let ok: Vec<(&String, &FitResult)> = fits.iter().filter_map(|(k, v)| v.as_ref().ok().map(|f| (k, f))).collect();
    let mut headers = vec!["term".to_string()];
    headers.extend(ok.iter().map(|(k, _)| (*k).clone()));
    let mut table = TextTable::new(&headers);
    table.note("firm-level fits; coefficient with HC3 significance stars; --- marks hours with no transactions");
    for (firm, v) in fits {
        if let Err(reason) = v {
            table.note(format!("omitted {firm}: {reason}"));
        }
    }
    let mut terms: Vec<String> = Vec::new();
    for (_, f) in &ok {
        for t in f.terms.iter().map(|t| &t.term).chain(&f.dropped_terms) {
            if !terms.contains(t) {
                terms.push(t.clone());
            }
        }
    }
    terms.sort_by_key(|t| term_rank(t));
    for term in &terms {
        let mut row = vec![term_label(term)];
        for (_, f) in &ok {
            row.push(match f.term(term) {
                Some(e) => format!("{:.4}{}", e.coef, stars(e.p_value)),
                None => EMPTY_CELL.into(),
            });
        }
        table.push(row);
    }
    let mut r2 = vec!["Adj. R2".to_string()];
    let mut n = vec!["N".to_string()];
    for (_, f) in &ok {
        r2.push(fmt_opt(f.adj_r2, 4));
        n.push(f.n.to_string());
    }
    table.push(r2);
    table.push(n);
    table
}

pub fn scorecard_table(set: &ScorecardSet, regimes: &BTreeMap<String, (Regime, bool)>) -> TextTable {
    let mut t = TextTable::new(&[
        "Firm", "Industry", "N", "n_peak", "n_off", "s_off", "PSS", "p(PSS)", "A_i", "FeeSavings", "delta", "Regime",
    ]);
    t.note("rows sorted by PSS descending; p(PSS) from the permutation null; Regime suffix ~ marks a borderline gas level");
    for r in &set.rows {
        let regime = regimes
            .get(&r.firm_id)
            .map(|(g, b)| format!("{g}{}", if *b { "~" } else { "" }))
            .unwrap_or_else(|| EMPTY_CELL.into());
        t.push(vec![
            r.firm_id.clone(),
            r.industry.clone(),
            r.n_total.to_string(),
            r.n_peak.to_string(),
            r.n_off.to_string(),
            format!("{:.3}", r.s_off),
            format!("{:+.3}", r.pss),
            fmt_opt(r.pss_pvalue, 4),
            fmt_opt(r.avoidance_ratio, 3),
            fmt_opt(r.fee_savings.map(|s| s * 100.0), 1),
            fmt_opt(r.pass_through, 3),
            regime,
        ]);
    }
    for o in &set.omitted {
        t.note(format!("omitted {}: {}", o.firm_id, o.reason));
    }
    t
}

pub fn floor_table(rows: &[FirmScorecard]) -> TextTable {
    let mut t = TextTable::new(&["Firm", "N", "h*", "mean gas h*", "C_actual", "C_cf", "Floor", "Floor%", "phi h*"]);
    t.note("USD; counterfactual cost if every transaction paid the cheapest observed hourly mean");
    let mut sorted: Vec<&FirmScorecard> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        b.floor_pct
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.floor_pct.unwrap_or(f64::NEG_INFINITY))
            .then_with(|| a.firm_id.cmp(&b.firm_id))
    });
    for r in sorted {
        t.push(vec![
            r.firm_id.clone(),
            r.n_total.to_string(),
            r.cheapest_hour.to_string(),
            fmt_dec(r.mean_gas_cheapest, 4),
            fmt_dec(r.c_actual, 2),
            fmt_dec(r.c_cf, 2),
            fmt_dec(r.floor_usd, 2),
            fmt_opt(r.floor_pct, 3),
            fmt_opt(r.fullness_at_cheapest, 3),
        ]);
    }
    t
}

pub fn weekday_weekend_table(rows: &[FirmScorecard]) -> TextTable {
    let mut t = TextTable::new(&[
        "Firm", "n M-F", "n Wke", "gas M-F", "gas Wke", "Premium", "t_gas", "phi M-F", "phi Wke", "dphi", "t_phi",
    ]);
    t.note("Premium = (gas M-F - gas Wke) / gas Wke; Welch t-tests without equal-variance assumption");
    let mut sorted: Vec<&FirmScorecard> = rows.iter().collect();
    sorted.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    for r in sorted {
        match &r.weekday_weekend {
            WeekdayWeekendOutcome::Computed(w) => t.push(vec![
                r.firm_id.clone(),
                w.n_weekday.to_string(),
                w.n_weekend.to_string(),
                format!("{:.4}", w.gas_weekday),
                format!("{:.4}", w.gas_weekend),
                fmt_opt(w.premium, 3),
                fmt_opt(w.t_gas.as_ref().map(|x| x.t), 3),
                fmt_opt(w.phi_weekday, 3),
                fmt_opt(w.phi_weekend, 3),
                fmt_opt(w.delta_phi, 3),
                fmt_opt(w.t_phi.as_ref().map(|x| x.t), 3),
            ]),
            WeekdayWeekendOutcome::Omitted { reason } => t.note(format!("omitted {}: {reason}", r.firm_id)),
        }
    }
    t
}

/// 24-row CSV of the forward curve.
pub fn forward_curve_csv(curve: &ForwardCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["hour", "expected_fee_usd", "beta", "t", "inestimable"])?;
    for p in &curve.points {
        let opt = |v: Option<f64>, dp: usize| v.map(|x| format!("{x:.dp$}")).unwrap_or_default();
        w.write_record([
            p.hour.to_string(),
            opt(p.expected_fee, 6),
            opt(p.beta, 6),
            opt(p.t, 3),
            p.inestimable.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
}
