//! CSV tables. The first column of every table is `schema`, holding a
//! versioned table name, so each row says which layout it follows.
//! Floats print in Rust's shortest round-trip form, which keeps payloads
//! byte-identical across runs. Column meanings are in `docs/schemas.md`.

use sha2::{Digest, Sha256};

use arw_core::{Config, Error, Interval, ModelParams, Odometer, Result, SiteContent};

use crate::stats::{MeanSe, Proportion};
use crate::{DecayReport, EmpiricalSummary, NmlDominanceReport, ScanReport, SpreadReport, TheoremCheck, ZetaCBracket};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: &[&'static str]) -> Self {
        Table {
            schema,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.schema);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut head = vec!["schema"];
        head.extend(&self.header);
        w.write_record(&head).map_err(io)?;
        for row in &self.rows {
            w.write_record(std::iter::once(self.schema).chain(row.iter().map(String::as_str)))
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn prop(p: &Proportion) -> [String; 3] {
    [s(p.estimate), s(p.lo), s(p.hi)]
}

fn mean(m: &MeanSe) -> [String; 2] {
    [s(m.mean), s(m.se)]
}

pub fn exit_stats_table(summary: &EmpiricalSummary) -> Table {
    let mut t = Table::new(
        "exit-stats/1",
        &[
            "n", "lambda", "p_right", "zeta", "initial", "trials", "mean_Mn_over_n", "se", "p_zero", "p_zero_lo",
            "p_zero_hi", "epsilon", "p_tail", "p_tail_lo", "p_tail_hi", "excluded", "seed",
        ],
    );
    let [m, se] = mean(&summary.mean_mn_over_n);
    let [z, zl, zh] = prop(&summary.p_zero);
    let [tl, tll, tlh] = prop(&summary.p_tail);
    t.push(vec![
        s(summary.n),
        s(summary.params.lambda),
        s(summary.params.p_right),
        s(summary.density),
        summary.initial.clone(),
        s(summary.trials),
        m,
        se,
        z,
        zl,
        zh,
        s(summary.epsilon),
        tl,
        tll,
        tlh,
        s(summary.excluded_truncated),
        s(summary.master_seed),
    ]);
    t
}

pub fn histogram_table(summary: &EmpiricalSummary) -> Table {
    let mut t = Table::new("exit-histogram/1", &["n", "m", "count"]);
    for &(m, c) in &summary.histogram {
        t.push(vec![s(summary.n), s(m), s(c)]);
    }
    t
}

pub fn scan_table(params: &ModelParams, scan: &ScanReport) -> Table {
    let mut t = Table::new(
        "hockey-stick/1",
        &["zeta", "n", "lambda", "p_right", "completed", "mean_Mn_over_n", "se", "excluded", "failed", "monotone_in_zeta"],
    );
    for c in &scan.cells {
        let mono = scan.monotone_means.iter().find(|m| m.0 == c.n).map(|m| m.1).unwrap_or(false);
        let [m, se] = mean(&c.mean_mn_over_n);
        t.push(vec![
            s(c.zeta),
            s(c.n),
            s(params.lambda),
            s(params.p_right),
            s(c.completed),
            m,
            se,
            s(c.excluded_truncated),
            s(c.failed),
            s(mono),
        ]);
    }
    t
}

pub fn zeta_c_table(b: &ZetaCBracket) -> Table {
    let mut t = Table::new(
        "zeta-c/1",
        &["lo", "hi", "midpoint", "n", "trials", "iterations", "non_monotone", "excluded"],
    );
    t.push(vec![
        s(b.lo),
        s(b.hi),
        s(b.midpoint()),
        s(b.n),
        s(b.trials),
        s(b.iterations),
        s(b.non_monotone),
        s(b.excluded_truncated),
    ]);
    t
}

pub fn zeta_probe_table(b: &ZetaCBracket) -> Table {
    let mut t = Table::new(
        "zeta-c-probe/1",
        &["zeta", "n", "mean_Mn", "se_Mn", "mean_Mhalf", "se_Mhalf", "z_score", "active"],
    );
    for p in &b.probes {
        let [mf, sf] = mean(&p.mean_full);
        let [mh, sh] = mean(&p.mean_half);
        t.push(vec![s(p.zeta), s(b.n), mf, sf, mh, sh, s(p.z_score), s(p.active)]);
    }
    t
}

pub fn theorem_table(theorem: &str, c: &TheoremCheck) -> Table {
    let mut t = Table::new(
        "theorem-check/1",
        &[
            "theorem", "generator", "zeta", "n", "zeta_c_hat", "epsilon", "epsilon_max", "bound", "estimate", "lo", "hi",
            "margin", "pass", "vacuous", "worst", "excluded",
        ],
    );
    for (i, g) in c.generators.iter().enumerate() {
        let [e, lo, hi] = prop(&g.estimate);
        t.push(vec![
            theorem.to_string(),
            g.initial.clone(),
            s(c.zeta),
            s(c.n),
            s(c.zeta_c_hat),
            s(c.epsilon),
            s(c.epsilon_max),
            s(c.bound),
            e,
            lo,
            hi,
            s(g.margin),
            s(g.pass),
            s(c.vacuous),
            s(i == c.worst),
            s(g.excluded_truncated),
        ]);
    }
    t
}

pub fn decay_table(d: &DecayReport) -> Table {
    let mut t = Table::new(
        "critical-decay/1",
        &["zeta", "n", "mean_Mn_over_n", "se", "excluded", "non_increasing", "level_positive", "increasing", "log_slope"],
    );
    for r in &d.rows {
        let [m, se] = mean(&r.mean_mn_over_n);
        t.push(vec![
            s(d.zeta),
            s(r.n),
            m,
            se,
            s(r.excluded_truncated),
            s(d.non_increasing),
            s(d.level_positive),
            s(d.increasing),
            s(d.log_slope),
        ]);
    }
    t
}

pub fn dominance_table(d: &NmlDominanceReport) -> Table {
    let mut t = Table::new(
        "nml-dominance/1",
        &[
            "n", "w_lo", "w_hi", "mean_Mn", "se_Mn", "mean_MnW", "se_MnW", "stat", "threshold", "pass", "escort_checked",
            "escort_violations", "excluded",
        ],
    );
    let [a, sa] = mean(&d.mean_mn);
    let [b, sb] = mean(&d.mean_mn_w);
    t.push(vec![
        s(d.n),
        s(d.w.lo),
        s(d.w.hi),
        a,
        sa,
        b,
        sb,
        s(d.verdict.one_sided_stat),
        s(d.verdict.threshold),
        s(d.verdict.pass),
        s(d.escort_checked),
        s(d.escort_violations),
        s(d.excluded_truncated),
    ]);
    t
}

pub fn spread_table(r: &SpreadReport) -> Table {
    let mut t = Table::new(
        "spread/1",
        &[
            "n", "k", "ell", "p_small", "p_small_lo", "p_small_hi", "p_enlarged_zero", "p_enlarged_zero_lo",
            "p_enlarged_zero_hi", "p_construction", "nb_implemented", "nb_geometric", "lower_bound", "combined_se",
            "pass", "construction_pass", "m_prime_dominated", "excluded",
        ],
    );
    let [a, al, ah] = prop(&r.p_small);
    let [b, bl, bh] = prop(&r.p_enlarged_zero);
    t.push(vec![
        s(r.n),
        s(r.k),
        s(r.ell),
        a,
        al,
        ah,
        b,
        bl,
        bh,
        s(r.p_construction.estimate),
        s(r.nb_implemented),
        s(r.nb_geometric),
        s(r.lower_bound),
        s(r.combined_se),
        s(r.pass),
        s(r.construction_pass),
        s(r.m_prime_dominance.pass),
        s(r.excluded_truncated),
    ]);
    t
}

/// One row per site of `region`: the final content and the odometer.
pub fn stabilize_table(config: &Config, odometer: &Odometer, region: Interval) -> Table {
    let mut t = Table::new("stabilize/1", &["x", "state", "particles", "odometer"]);
    for x in region.iter() {
        let c = config.get(x);
        let state = match c {
            SiteContent::Empty => "empty",
            SiteContent::Sleeping => "sleeping",
            SiteContent::Active(_) => "active",
        };
        t.push(vec![s(x), state.to_string(), s(c.count()), s(odometer.get(x))]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_leads_every_row() {
        let mut t = Table::new("demo/1", &["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "schema,a,b\ndemo/1,1,\"x,y\"\n");
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
