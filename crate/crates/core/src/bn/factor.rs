//! Table factors and variable elimination.

use std::collections::BTreeSet;

use super::{normalize, Findings, Result, ValidatedNetwork};

/// A non-negative function over a set of discrete variables.
///
/// `vars` is sorted ascending; `values` is row-major with the last variable
/// varying fastest.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn scalar(value: f64) -> Self {
        Self {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![value],
        }
    }

    /// Stride of each variable in `values`.
    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.cards[i + 1];
        }
        strides
    }

    fn position(&self, var: usize) -> Option<usize> {
        self.vars.binary_search(&var).ok()
    }

    fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| match self.position(*v) {
                Some(i) => self.cards[i],
                None => other.cards[other.position(*v).unwrap()],
            })
            .collect();

        // stride of each output variable within each operand (0 if absent)
        let project = |f: &Factor| -> Vec<usize> {
            let s = f.strides();
            vars.iter()
                .map(|v| f.position(*v).map_or(0, |i| s[i]))
                .collect()
        };
        let sa = project(self);
        let sb = project(other);

        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut counter = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            // odometer increment, last variable fastest
            for d in (0..vars.len()).rev() {
                counter[d] += 1;
                ia += sa[d];
                ib += sb[d];
                if counter[d] < cards[d] {
                    break;
                }
                ia -= sa[d] * cards[d];
                ib -= sb[d] * cards[d];
                counter[d] = 0;
            }
        }
        Factor {
            vars,
            cards,
            values,
        }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let pos = self
            .position(var)
            .expect("summing out a variable not in scope");
        let strides = self.strides();
        let card = self.cards[pos];
        let stride = strides[pos];
        let outer = self.values.len() / (card * stride);

        let mut values = vec![0.0; outer * stride];
        for o in 0..outer {
            for i in 0..stride {
                let mut acc = 0.0;
                for s in 0..card {
                    acc += self.values[(o * card + s) * stride + i];
                }
                values[o * stride + i] = acc;
            }
        }

        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor {
            vars,
            cards,
            values,
        }
    }
}

/// CPT of `node` times its local evidence, as a factor over the node and its parents.
fn node_factor(net: &ValidatedNetwork, node: usize, findings: &Findings) -> Factor {
    let n = net.node_at(node);
    let mut vars: Vec<usize> = n.parents().to_vec();
    vars.push(node);
    vars.sort_unstable();
    let cards: Vec<usize> = vars.iter().map(|&v| net.node_at(v).cardinality()).collect();

    let size: usize = cards.iter().product();
    let mut values = Vec::with_capacity(size);
    let mut assignment = vec![0usize; net.len()];
    let mut counter = vec![0usize; vars.len()];
    for _ in 0..size {
        for (d, &v) in vars.iter().enumerate() {
            assignment[v] = counter[d];
        }
        let config = net.parent_config(node, &assignment);
        let state = assignment[node];
        values.push(n.cpt_entry(config, state) * findings.weight(node, state));

        for d in (0..vars.len()).rev() {
            counter[d] += 1;
            if counter[d] < cards[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Factor {
        vars,
        cards,
        values,
    }
}

/// Next variable to eliminate: fewest distinct neighbours in the current
/// interaction graph, ties broken by node id.
fn pick_min_degree(
    net: &ValidatedNetwork,
    remaining: &BTreeSet<usize>,
    factors: &[Factor],
) -> usize {
    remaining
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let degree = |v: usize| {
                let mut neighbours = BTreeSet::new();
                for f in factors.iter().filter(|f| f.position(v).is_some()) {
                    neighbours.extend(f.vars.iter().copied().filter(|&u| u != v));
                }
                neighbours.len()
            };
            degree(a)
                .cmp(&degree(b))
                .then_with(|| net.node_at(a).id().cmp(net.node_at(b).id()))
        })
        .expect("no variable left to eliminate")
}

/// Normalized posterior marginal of `target`.
pub(super) fn eliminate(
    net: &ValidatedNetwork,
    target: usize,
    findings: &Findings,
) -> Result<Vec<f64>> {
    let mut factors: Vec<Factor> = (0..net.len())
        .map(|i| node_factor(net, i, findings))
        .collect();

    let mut remaining: BTreeSet<usize> = (0..net.len()).filter(|&i| i != target).collect();
    while !remaining.is_empty() {
        let var = pick_min_degree(net, &remaining, &factors);
        remaining.remove(&var);

        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.position(var).is_some());
        factors = rest;
        let merged = touching
            .iter()
            .fold(Factor::scalar(1.0), |acc, f| acc.product(f));
        factors.push(merged.sum_out(var));
    }

    let result = factors
        .iter()
        .fold(Factor::scalar(1.0), |acc, f| acc.product(f));
    debug_assert_eq!(result.vars, vec![target]);
    normalize(result.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factor(vars: &[usize], cards: &[usize], values: &[f64]) -> Factor {
        Factor {
            vars: vars.to_vec(),
            cards: cards.to_vec(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn product_aligns_shared_variable() {
        // f(a,b) * g(b,c), all binary
        let f = factor(&[0, 1], &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = factor(&[1, 2], &[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let h = f.product(&g);
        assert_eq!(h.vars, vec![0, 1, 2]);
        let expect: Vec<f64> = (0..8)
            .map(|i| {
                let (a, b, c) = (i >> 2 & 1, i >> 1 & 1, i & 1);
                f.values[a * 2 + b] * g.values[b * 2 + c]
            })
            .collect();
        assert_eq!(h.values, expect);
    }

    #[test]
    fn product_of_disjoint_scopes_is_outer_product() {
        let f = factor(&[3], &[3], &[1.0, 2.0, 3.0]);
        let g = factor(&[1], &[2], &[10.0, 20.0]);
        let h = f.product(&g);
        assert_eq!(h.vars, vec![1, 3]);
        assert_eq!(h.values, vec![10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn sum_out_middle_variable() {
        let f = factor(
            &[0, 1, 2],
            &[2, 3, 2],
            &(0..12).map(f64::from).collect::<Vec<_>>(),
        );
        let g = f.sum_out(1);
        assert_eq!(g.vars, vec![0, 2]);
        // a=0,c=0: 0+2+4 ; a=0,c=1: 1+3+5 ; a=1,c=0: 6+8+10 ; a=1,c=1: 7+9+11
        assert_eq!(g.values, vec![6.0, 9.0, 24.0, 27.0]);
    }
}
