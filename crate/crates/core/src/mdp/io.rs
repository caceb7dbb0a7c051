use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TabularMdp;
use crate::error::{Error, Result};

/// On-disk MDP document. Transitions are nested `[s][a][s']`, rewards `[m][s][a]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_objectives: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<TabularMdp> {
        let (s_n, a_n, m_n) = (self.n_states, self.n_actions, self.n_objectives);
        if self.transitions.len() != s_n || self.transitions.iter().any(|r| r.len() != a_n) {
            return Err(Error::config(format!("transitions must be nested [{s_n}][{a_n}][{s_n}]")));
        }
        if self.rewards.len() != m_n || self.rewards.iter().any(|r| r.len() != s_n) {
            return Err(Error::config(format!("rewards must be nested [{m_n}][{s_n}][{a_n}]")));
        }
        let mut transitions = Vec::with_capacity(s_n * a_n * s_n);
        for (s, rows) in self.transitions.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                if row.len() != s_n {
                    return Err(Error::config(format!("transitions[{s}][{a}] has {} entries, expected {s_n}", row.len())));
                }
                transitions.extend_from_slice(row);
            }
        }
        let mut rewards = Vec::with_capacity(m_n * s_n * a_n);
        for (m, table) in self.rewards.iter().enumerate() {
            for (s, row) in table.iter().enumerate() {
                if row.len() != a_n {
                    return Err(Error::config(format!("rewards[{m}][{s}] has {} entries, expected {a_n}", row.len())));
                }
                rewards.extend_from_slice(row);
            }
        }
        TabularMdp::new(s_n, a_n, m_n, transitions, rewards, self.gamma, self.rho)
    }

    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let (s_n, a_n, m_n) = (mdp.n_states, mdp.n_actions, mdp.n_objectives);
        Self {
            n_states: s_n,
            n_actions: a_n,
            n_objectives: m_n,
            gamma: mdp.discount,
            rho: mdp.initial_dist.clone(),
            transitions: (0..s_n)
                .map(|s| (0..a_n).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            rewards: (0..m_n)
                .map(|m| (0..s_n).map(|s| (0..a_n).map(|a| mdp.reward(m, s, a)).collect()).collect())
                .collect(),
        }
    }
}

impl TabularMdp {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        file.into_mdp()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("mdp_path not found: {} ({e})", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&MdpFile::from_mdp(self)).expect("mdp serializes")
    }
}
