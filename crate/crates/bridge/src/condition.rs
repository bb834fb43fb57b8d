//! Condition assembly: which language-model states feed the generator.
//!
//! The multimodal states and the query states are separate branches of
//! the same forward pass. A bundle picks one branch or stacks both,
//! and the chosen layout is what the connector, and ultimately the
//! diffusion model, conditions on.

use serde::{Deserialize, Serialize};
use tensor_core::{Scalar, Tensor};

use crate::error::{BridgeError, BridgeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// Query states alone: a fixed-length condition.
    QueryOnly,
    /// Multimodal (image + text) states alone.
    LastOnly,
    /// Both, multimodal states first.
    Dual,
}

/// An assembled condition sequence plus the branches it came from.
pub struct ConditionBundle<T: Scalar> {
    pub mode: ConditionMode,
    pub mm_embeds: Option<Tensor<T>>,
    pub query_embeds: Option<Tensor<T>>,
    /// `[l_cond, d_lm]` sequence the connector consumes.
    pub assembled: Tensor<T>,
}

impl<T: Scalar> ConditionBundle<T> {
    pub fn len(&self) -> usize {
        self.assembled.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.assembled.shape()[1]
    }
}

fn check_matrix<T: Scalar>(t: &Tensor<T>) -> BridgeResult<usize> {
    match t.shape() {
        [_, d] => Ok(*d),
        other => Err(BridgeError::NotAMatrix { got: other.to_vec() }),
    }
}

/// Stack the branches demanded by `mode`. Dual order is fixed:
/// multimodal states first, query states after.
pub fn assemble_condition<T: Scalar>(
    mm: Option<&Tensor<T>>,
    queries: Option<&Tensor<T>>,
    mode: ConditionMode,
) -> BridgeResult<ConditionBundle<T>> {
    let missing = |component| BridgeError::MissingComponent { mode, component };
    let assembled = match mode {
        ConditionMode::QueryOnly => {
            let q = queries.ok_or_else(|| missing("query_embeds"))?;
            check_matrix(q)?;
            q.clone()
        }
        ConditionMode::LastOnly => {
            let m = mm.ok_or_else(|| missing("mm_embeds"))?;
            check_matrix(m)?;
            m.clone()
        }
        ConditionMode::Dual => {
            let m = mm.ok_or_else(|| missing("mm_embeds"))?;
            let q = queries.ok_or_else(|| missing("query_embeds"))?;
            let (dm, dq) = (check_matrix(m)?, check_matrix(q)?);
            if dm != dq {
                return Err(BridgeError::DimMismatch { mm: dm, queries: dq });
            }
            Tensor::concat(&[m.clone(), q.clone()], 0)?
        }
    };
    Ok(ConditionBundle {
        mode,
        mm_embeds: mm.cloned(),
        query_embeds: queries.cloned(),
        assembled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(rows: usize, dim: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[rows, dim], 1.0, &mut rng).detach()
    }

    #[test]
    fn lengths_follow_the_mode_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            use rand::Rng;
            let l_mm = rng.gen_range(1..40);
            let n = rng.gen_range(1..20);
            let mm = states(l_mm, 8, l_mm as u64);
            let q = states(n, 8, 1000 + n as u64);

            let b = assemble_condition(Some(&mm), Some(&q), ConditionMode::QueryOnly).unwrap();
            assert_eq!(b.len(), n);
            let b = assemble_condition(Some(&mm), Some(&q), ConditionMode::LastOnly).unwrap();
            assert_eq!(b.len(), l_mm);
            let b = assemble_condition(Some(&mm), Some(&q), ConditionMode::Dual).unwrap();
            assert_eq!(b.len(), l_mm + n);
        }
    }

    #[test]
    fn dual_puts_mm_states_first() {
        let mm = states(69, 16, 1);
        let q = states(16, 16, 2);
        let b = assemble_condition(Some(&mm), Some(&q), ConditionMode::Dual).unwrap();
        assert_eq!(b.len(), 85);
        let flat = b.assembled.to_vec();
        assert_eq!(flat[..69 * 16], mm.to_vec());
        assert_eq!(flat[69 * 16..], q.to_vec());
    }

    #[test]
    fn missing_branches_are_rejected() {
        let mm = states(5, 8, 1);
        let q = states(3, 8, 2);
        assert!(matches!(
            assemble_condition::<f32>(Some(&mm), None, ConditionMode::QueryOnly),
            Err(BridgeError::MissingComponent { component: "query_embeds", .. })
        ));
        assert!(matches!(
            assemble_condition::<f32>(None, Some(&q), ConditionMode::LastOnly),
            Err(BridgeError::MissingComponent { component: "mm_embeds", .. })
        ));
        assert!(matches!(
            assemble_condition::<f32>(None, Some(&q), ConditionMode::Dual),
            Err(BridgeError::MissingComponent { component: "mm_embeds", .. })
        ));

        let narrow = states(4, 4, 3);
        assert!(matches!(
            assemble_condition(Some(&mm), Some(&narrow), ConditionMode::Dual),
            Err(BridgeError::DimMismatch { mm: 8, queries: 4 })
        ));
        let cube = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(matches!(
            assemble_condition(Some(&cube), None, ConditionMode::LastOnly),
            Err(BridgeError::NotAMatrix { .. })
        ));
    }
}
