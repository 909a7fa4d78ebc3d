use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    /// `true` for an observed death, `false` for censoring.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        ensure!(time > 0.0 && time.is_finite(), Validation, "survival time must be positive, got {time}");
        Ok(Self { time, event })
    }
}

/// Negative log Cox partial likelihood (sum over events, Breslow ties) of
/// a `[n]` or `[n, 1]` risk vector.
pub fn cox_npll_tape(tape: &mut Tape, risks: Var, records: &[SurvivalRecord]) -> Result<Var> {
    let n = records.len();
    ensure!(
        tape.value(risks).len() == n,
        Contract,
        "{} risks for {n} survival records",
        tape.value(risks).len()
    );
    ensure!(records.iter().any(|r| r.event), Validation, "no events: partial likelihood undefined");
    let r = tape.reshape(risks, &[n, 1])?;
    let max = tape.value(r).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("risk scores must be finite".into()));
    }
    let shifted = tape.add_scalar(r, -max)?;
    let events: Vec<usize> = (0..n).filter(|&i| records[i].event).collect();
    let mut at_risk = Tensor::zeros(&[events.len(), n]);
    let mut pick = Tensor::zeros(&[1, events.len()]);
    let mut select = Tensor::zeros(&[events.len(), n]);
    for (e, &i) in events.iter().enumerate() {
        for j in 0..n {
            if records[j].time >= records[i].time {
                at_risk.data_mut()[e * n + j] = 1.0;
            }
        }
        select.data_mut()[e * n + i] = 1.0;
        pick.data_mut()[e] = 1.0;
    }
    let at_risk = tape.constant(at_risk);
    let select = tape.constant(select);
    let expd = tape.exp(shifted)?;
    let denom = tape.matmul(at_risk, expd)?;
    let log_denom = tape.log(denom)?;
    let own = tape.matmul(select, shifted)?;
    let per_event = tape.sub(log_denom, own)?;
    tape.sum(per_event)
}

pub fn cox_npll(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::vector(risks.to_vec()));
    let l = cox_npll_tape(&mut tape, r, records)?;
    tape.item(l)
}

/// Minimal Fenwick tree over counts.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance index. A pair is comparable when the subject with
/// the strictly shorter time had an event; it is concordant when that
/// subject has the higher risk, and counts one half on a risk tie.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    let n = records.len();
    ensure!(risks.len() == n, Contract, "{} risks for {n} survival records", risks.len());
    ensure!(risks.iter().all(|r| r.is_finite()), Numeric, "risk scores must be finite");
    let mut ranks: Vec<f64> = risks.to_vec();
    ranks.sort_by(f64::total_cmp);
    ranks.dedup();
    let rank = |r: f64| ranks.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    let mut tree = Fenwick(vec![0; ranks.len() + 1]);
    let mut inserted = 0u64;
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut g = 0;
    while g < n {
        let t = records[order[g]].time;
        let mut end = g;
        while end < n && records[order[end]].time == t {
            end += 1;
        }
        for &i in &order[g..end] {
            if records[i].event {
                let k = rank(risks[i]);
                let below = tree.prefix(k);
                let up_to = tree.prefix(k + 1);
                concordant += below;
                tied += up_to - below;
                comparable += inserted;
            }
        }
        for &i in &order[g..end] {
            tree.add(rank(risks[i]));
            inserted += 1;
        }
        g = end;
    }
    ensure!(comparable > 0, Validation, "no comparable pairs");
    Ok((concordant as f64 + 0.5 * tied as f64) / comparable as f64)
}
