use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mdp::StateRepr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
}

/// Losses of one gradient step. `qk`/`vk` follow the partial scales in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub qh: f64,
    pub vh: f64,
    pub qk: Vec<f64>,
    pub vk: Vec<f64>,
    pub bc: Option<f64>,
}

/// Running means of step losses between log points.
#[derive(Clone, Debug, Default)]
pub struct LossAverager {
    sum: StepLosses,
    bc_n: usize,
    n: usize,
}

impl LossAverager {
    pub fn add(&mut self, l: &StepLosses) {
        if self.n == 0 {
            self.sum = StepLosses { bc: None, ..l.clone() };
            self.sum.qk.iter_mut().chain(self.sum.vk.iter_mut()).for_each(|x| *x = 0.0);
            self.sum.qh = 0.0;
            self.sum.vh = 0.0;
        }
        self.n += 1;
        self.sum.qh += l.qh;
        self.sum.vh += l.vh;
        for (a, b) in self.sum.qk.iter_mut().zip(&l.qk) {
            *a += b;
        }
        for (a, b) in self.sum.vk.iter_mut().zip(&l.vk) {
            *a += b;
        }
        if let Some(bc) = l.bc {
            *self.sum.bc.get_or_insert(0.0) += bc;
            self.bc_n += 1;
        }
    }

    /// Mean since the last call, or `None` if nothing was added.
    pub fn take(&mut self) -> Option<StepLosses> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let s = std::mem::take(&mut self.sum);
        let out = StepLosses {
            qh: s.qh / n,
            vh: s.vh / n,
            qk: s.qk.iter().map(|x| x / n).collect(),
            vk: s.vk.iter().map(|x| x / n).collect(),
            bc: s.bc.map(|b| b / self.bc_n as f64),
        };
        self.n = 0;
        self.bc_n = 0;
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_kstar: f64,
    /// Share of decisions per scale.
    pub kstar_freq: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: Phase,
    pub losses: Option<StepLosses>,
    pub eval: Option<EvalSummary>,
}

/// Append-only metrics stream with a fixed column layout per scale set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub scales: Vec<usize>,
    pub rows: Vec<MetricsRow>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsLog {
    pub fn new(scales: Vec<usize>) -> Self {
        MetricsLog { scales, rows: Vec::new() }
    }

    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    fn partial(&self) -> &[usize] {
        &self.scales[..self.scales.len().saturating_sub(1)]
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = vec!["step".into(), "phase".into(), "loss_qh".into(), "loss_vh".into()];
        h.extend(self.partial().iter().map(|k| format!("loss_qk_{k}")));
        h.extend(self.partial().iter().map(|k| format!("loss_vk_{k}")));
        h.extend(["loss_bc", "success_rate", "mean_kstar"].map(String::from));
        h.extend(self.scales.iter().map(|k| format!("per_k_selection_freq_{k}")));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header()).map_err(csv_err)?;
        let np = self.partial().len();
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.phase.as_str().to_string()];
            match &r.losses {
                Some(l) => {
                    rec.push(l.qh.to_string());
                    rec.push(l.vh.to_string());
                    rec.extend(l.qk.iter().map(f64::to_string));
                    rec.extend(l.vk.iter().map(f64::to_string));
                    rec.push(opt(l.bc));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 3 + 2 * np)),
            }
            match &r.eval {
                Some(e) => {
                    rec.push(e.success_rate.to_string());
                    rec.push(e.mean_kstar.to_string());
                    rec.extend(self.scales.iter().map(|k| e.kstar_freq.get(k).copied().unwrap_or(0.0).to_string()));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 2 + self.scales.len())),
            }
            out.write_record(rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn last_eval(&self) -> Option<&EvalSummary> {
        self.rows.iter().rev().find_map(|r| r.eval.as_ref())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// One policy query: where it happened and what was chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub phase: &'static str,
    /// Environment step at which the query was made.
    pub step: usize,
    pub episode: usize,
    pub t: usize,
    pub state: StateRepr,
    pub k_star: usize,
    pub chunk_index: usize,
    /// Best raw score per scale.
    pub best: Vec<f64>,
}

pub fn state_label(s: &StateRepr) -> String {
    match s {
        StateRepr::Discrete(i) => i.to_string(),
        StateRepr::Continuous(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
    }
}

pub fn write_traces<W: Write>(scales: &[usize], traces: &[TraceRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["phase", "step", "episode", "t", "state", "k_star", "chunk_index"].map(String::from).to_vec();
    header.extend(scales.iter().map(|k| format!("score_{k}")));
    out.write_record(&header).map_err(csv_err)?;
    for r in traces {
        let mut rec = vec![
            r.phase.to_string(),
            r.step.to_string(),
            r.episode.to_string(),
            r.t.to_string(),
            state_label(&r.state),
            r.k_star.to_string(),
            r.chunk_index.to_string(),
        ];
        rec.extend(r.best.iter().map(|x| if x.is_finite() { x.to_string() } else { String::new() }));
        rec.resize(header.len(), String::new());
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averager_means_and_resets() {
        let mut a = LossAverager::default();
        a.add(&StepLosses { qh: 1.0, vh: 2.0, qk: vec![3.0], vk: vec![4.0], bc: None });
        a.add(&StepLosses { qh: 3.0, vh: 2.0, qk: vec![5.0], vk: vec![0.0], bc: Some(1.0) });
        let m = a.take().unwrap();
        assert_eq!(m, StepLosses { qh: 2.0, vh: 2.0, qk: vec![4.0], vk: vec![2.0], bc: Some(1.0) });
        assert!(a.take().is_none());
    }

    #[test]
    fn csv_columns_follow_scales() {
        let mut log = MetricsLog::new(vec![1, 5]);
        log.push(MetricsRow { step: 0, phase: Phase::Offline, losses: None, eval: None });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "step,phase,loss_qh,loss_vh,loss_qk_1,loss_vk_1,loss_bc,success_rate,mean_kstar,per_k_selection_freq_1,per_k_selection_freq_5\n"
        ));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 11);
    }
}
