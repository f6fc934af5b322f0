use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ProtocolConfig;

pub const RECALL_KS: [usize; 4] = [1, 2, 4, 8];
pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(K, R@K)` for K in [`RECALL_KS`] (clamped to the gallery size).
    pub recall: Vec<(usize, f64)>,
    pub nmi: f64,
    pub nmi_degenerate: bool,
    /// `(rank, CMC@rank)` for ranks in [`CMC_RANKS`] (clamped likewise).
    pub cmc: Vec<(usize, f64)>,
    pub map: f64,
    /// Queries without any admissible correct match.
    pub excluded_queries: usize,
    pub num_queries: usize,
    pub gallery_size: usize,
    pub config: ProtocolConfig,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        lookup(&self.recall, k)
    }

    pub fn cmc_at(&self, rank: usize) -> Option<f64> {
        lookup(&self.cmc, rank)
    }

    fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .recall
            .iter()
            .map(|&(k, v)| (format!("R@{k}"), v))
            .collect();
        out.push(("NMI".into(), self.nmi));
        out.extend(self.cmc.iter().map(|&(r, v)| (format!("CMC@{r}"), v)));
        out.push(("mAP".into(), self.map));
        out
    }

    /// `key=value` lines, preceded by `#` comment lines echoing the protocol.
    pub fn to_kv(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        writeln!(out, "# protocol={} measure={}", c.protocol, c.measure()).unwrap();
        writeln!(
            out,
            "# queries={} gallery={} excluded_queries={} seed={}",
            self.num_queries, self.gallery_size, self.excluded_queries, c.seed
        )
        .unwrap();
        if self.nmi_degenerate {
            writeln!(out, "# nmi_degenerate=true").unwrap();
        }
        for (k, v) in self.entries() {
            writeln!(out, "{k}={v:.6}").unwrap();
        }
        out
    }

    /// Tab-separated header matching [`Self::table_row`].
    pub fn table_header(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, _)| k)
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub fn table_row(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(_, v)| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join("\t")
    }

    /// Every metric lies in `[0, 1]` and both curves are non-decreasing.
    pub fn is_consistent(&self) -> bool {
        let in_range = self.entries().iter().all(|(_, v)| (0.0..=1.0).contains(v));
        let monotone = |xs: &[(usize, f64)]| xs.windows(2).all(|w| w[0].1 <= w[1].1);
        in_range && monotone(&self.recall) && monotone(&self.cmc)
    }
}

fn lookup(xs: &[(usize, f64)], k: usize) -> Option<f64> {
    xs.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
}
