//! The four augmentation strategies as compositions of masking operations.
//!
//! ```text
//! SA   Op1*M + Op5*N
//! ELC  Op2*K + Op1*(M-K) + Op5*N
//! EA   Op3*K + Op1*(M-K) + Op5*N
//! ER   (Op3 + Op4)*K + Op1*(M-K) + Op5*N
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::{EraseTarget, Operation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("K={k} exceeds M={m}")]
    InvalidKM { k: usize, m: usize },
    #[error("{0} choice set is empty")]
    EmptyChoices(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Sa,
    Elc,
    Ea,
    Er,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::Sa, StrategyKind::Elc, StrategyKind::Ea, StrategyKind::Er];

    pub fn is_label_flipping(self) -> bool {
        self != StrategyKind::Sa
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Sa => "sa",
            StrategyKind::Elc => "elc",
            StrategyKind::Ea => "ea",
            StrategyKind::Er => "er",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(StrategyKind::Sa),
            "elc" => Ok(StrategyKind::Elc),
            "ea" => Ok(StrategyKind::Ea),
            "er" => Ok(StrategyKind::Er),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// Parse `sa,elc` or `all`.
pub fn parse_strategy_list(s: &str) -> Result<Vec<StrategyKind>, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(StrategyKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: StrategyKind = part.parse()?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err("no strategies given".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Label-flipping operations per sentence.
    pub k: usize,
    pub m_choices: Vec<usize>,
    pub n_choices: Vec<usize>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            k: 1,
            m_choices: vec![1, 2, 3],
            n_choices: vec![1, 2, 3],
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.m_choices.is_empty() {
            return Err(StrategyError::EmptyChoices("M"));
        }
        if self.n_choices.is_empty() {
            return Err(StrategyError::EmptyChoices("N"));
        }
        if let Some(&m) = self.m_choices.iter().find(|&&m| m < self.k) {
            return Err(StrategyError::InvalidKM { k: self.k, m });
        }
        Ok(())
    }
}

/// Operation list for fixed counts.
pub fn strategy_ops(kind: StrategyKind, k: usize, m: usize, n: usize) -> Result<Vec<Operation>, StrategyError> {
    if k > m {
        return Err(StrategyError::InvalidKM { k, m });
    }
    let mut ops = Vec::with_capacity(m + n + k);
    let preserving_entity = match kind {
        StrategyKind::Sa => m,
        _ => m - k,
    };
    for _ in 0..k {
        match kind {
            StrategyKind::Sa => break,
            StrategyKind::Elc => ops.push(Operation::ChangeType { new_type: None }),
            StrategyKind::Ea => ops.push(Operation::AddEntity { new_type: None }),
            StrategyKind::Er => {
                ops.push(Operation::AddEntity { new_type: None });
                ops.push(Operation::EraseEntity {
                    target: EraseTarget::Anchor,
                });
            }
        }
    }
    ops.extend(std::iter::repeat_n(Operation::AugmentEntity, preserving_entity));
    ops.extend(std::iter::repeat_n(Operation::AugmentContext, n));
    Ok(ops)
}

/// Draw M and N uniformly from their choice sets and build the op list.
pub fn compose_strategy<R: Rng + ?Sized>(
    kind: StrategyKind,
    cfg: &StrategyConfig,
    rng: &mut R,
) -> Result<Vec<Operation>, StrategyError> {
    if cfg.m_choices.is_empty() {
        return Err(StrategyError::EmptyChoices("M"));
    }
    if cfg.n_choices.is_empty() {
        return Err(StrategyError::EmptyChoices("N"));
    }
    let m = cfg.m_choices[rng.random_range(0..cfg.m_choices.len())];
    let n = cfg.n_choices[rng.random_range(0..cfg.n_choices.len())];
    strategy_ops(kind, cfg.k, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::OpKind;
    use crate::rng;

    fn kinds(ops: &[Operation]) -> Vec<OpKind> {
        ops.iter().map(Operation::kind).collect()
    }

    #[test]
    fn table_rows() {
        use OpKind::*;
        assert_eq!(kinds(&strategy_ops(StrategyKind::Sa, 1, 2, 3).unwrap()), vec![Op1, Op1, Op5, Op5, Op5]);
        assert_eq!(kinds(&strategy_ops(StrategyKind::Elc, 1, 1, 2).unwrap()), vec![Op2, Op5, Op5]);
        assert_eq!(kinds(&strategy_ops(StrategyKind::Er, 1, 2, 1).unwrap()), vec![Op3, Op4, Op1, Op5]);
        assert_eq!(kinds(&strategy_ops(StrategyKind::Ea, 2, 3, 1).unwrap()), vec![Op3, Op3, Op1, Op5]);
    }

    #[test]
    fn er_erases_its_anchor() {
        let ops = strategy_ops(StrategyKind::Er, 1, 1, 0).unwrap();
        assert_eq!(ops[1], Operation::EraseEntity { target: EraseTarget::Anchor });
    }

    #[test]
    fn k_above_m_rejected() {
        assert_eq!(strategy_ops(StrategyKind::Elc, 2, 1, 1), Err(StrategyError::InvalidKM { k: 2, m: 1 }));
        let cfg = StrategyConfig { k: 2, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn draws_cover_choice_sets() {
        let cfg = StrategyConfig::default();
        let mut r = rng::seeded(4);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let ops = compose_strategy(StrategyKind::Sa, &cfg, &mut r).unwrap();
            let m = ops.iter().filter(|o| o.kind() == OpKind::Op1).count();
            let n = ops.iter().filter(|o| o.kind() == OpKind::Op5).count();
            seen.insert((m, n));
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn parses_lists() {
        assert_eq!(parse_strategy_list("all").unwrap().len(), 4);
        assert_eq!(parse_strategy_list("ELC, sa").unwrap(), vec![StrategyKind::Elc, StrategyKind::Sa]);
        assert!(parse_strategy_list("xx").is_err());
    }
}
