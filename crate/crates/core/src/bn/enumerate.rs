//! Brute-force marginals over the full joint distribution.

use super::{normalize, BnError, Findings, Result, ValidatedNetwork, MAX_ENUMERATION};

pub(super) fn marginal(
    net: &ValidatedNetwork,
    target: usize,
    findings: &Findings,
) -> Result<Vec<f64>> {
    let cards: Vec<usize> = net.nodes().iter().map(|n| n.cardinality()).collect();
    let size = cards.iter().fold(1u128, |acc, &c| acc * c as u128);
    if size > MAX_ENUMERATION as u128 {
        return Err(BnError::StateSpaceTooLarge { size });
    }

    let mut acc = vec![0.0; cards[target]];
    let mut assignment = vec![0usize; cards.len()];
    for _ in 0..size {
        let mut weight = 1.0;
        for (i, node) in net.nodes().iter().enumerate() {
            let state = assignment[i];
            weight *= node.cpt_entry(net.parent_config(i, &assignment), state);
            if findings.touches(i) {
                weight *= findings.weight(i, state);
            }
            if weight == 0.0 {
                break;
            }
        }
        acc[assignment[target]] += weight;

        for d in (0..cards.len()).rev() {
            assignment[d] += 1;
            if assignment[d] < cards[d] {
                break;
            }
            assignment[d] = 0;
        }
    }
    normalize(acc)
}
