//! Central finite-difference gradient checking.

use std::collections::HashMap;

use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub groups: Vec<GroupReport>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn all_within(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

/// Compare analytic gradients against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps), per coordinate. The relative error
/// denominator is max(|analytic|, |numeric|, 1e-8).
///
/// `eval` must be deterministic: any randomness inside it has to come from a
/// seed fixed outside this call.
pub fn finite_difference_check(
    params: &mut ParamStore,
    analytic: &HashMap<String, Vec<f64>>,
    eps: f64,
    mut eval: impl FnMut(&ParamStore) -> f64,
) -> FdReport {
    assert!(eps > 0.0, "eps must be positive");
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut groups = Vec::new();
    for name in names {
        let n = params.get(&name).unwrap().values.len();
        let grad = analytic
            .get(&name)
            .unwrap_or_else(|| panic!("no analytic gradient for {name}"));
        assert_eq!(grad.len(), n);
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = params.get(&name).unwrap().values[i];
            params.get_mut(&name).unwrap().values[i] = orig + eps;
            let plus = eval(params);
            params.get_mut(&name).unwrap().values[i] = orig - eps;
            let minus = eval(params);
            params.get_mut(&name).unwrap().values[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
        groups.push(GroupReport {
            name,
            max_rel_error: worst,
        });
    }
    FdReport { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, standard_normal};
    use crate::tape::Tape;

    fn grads_of(params: &ParamStore, build: impl Fn(&mut Tape, &HashMap<String, usize>) -> usize) -> HashMap<String, Vec<f64>> {
        let mut tape = Tape::new();
        let ids = params.register_all(&mut tape).unwrap();
        let loss = build(&mut tape, &ids);
        let gm = tape.backward(loss).unwrap();
        ids.iter()
            .map(|(name, &id)| (name.clone(), gm.get(id).unwrap().to_vec()))
            .collect()
    }

    // f(p) = sum(p^2): central differences are exact up to rounding.
    #[test]
    fn quadratic_is_exact() {
        let mut params = ParamStore::new();
        params
            .add("p", 2, 3, standard_normal(&mut seeded_rng(5), 6))
            .unwrap();
        let build = |tape: &mut Tape, ids: &HashMap<String, usize>| {
            let p = ids["p"];
            let sq = tape.mul(p, p).unwrap();
            tape.sum(sq)
        };
        let analytic = grads_of(&params, build);
        let report = finite_difference_check(&mut params, &analytic, 1e-5, |ps| {
            let mut tape = Tape::new();
            let ids = ps.register_all(&mut tape).unwrap();
            let loss = build(&mut tape, &ids);
            tape.scalar(loss)
        });
        assert!(report.max_rel_error() <= 1e-8, "{}", report.max_rel_error());
    }

    #[test]
    fn sigmoid_chain_within_tolerance() {
        let mut params = ParamStore::new();
        params
            .add("w", 3, 3, standard_normal(&mut seeded_rng(6), 9))
            .unwrap();
        params
            .add("x", 3, 2, standard_normal(&mut seeded_rng(7), 6))
            .unwrap();
        let build = |tape: &mut Tape, ids: &HashMap<String, usize>| {
            let m = tape.matmul(ids["w"], ids["x"]).unwrap();
            let s = tape.sigmoid(m);
            let s2 = tape.sigmoid(s);
            tape.sum(s2)
        };
        let analytic = grads_of(&params, build);
        let report = finite_difference_check(&mut params, &analytic, 1e-5, |ps| {
            let mut tape = Tape::new();
            let ids = ps.register_all(&mut tape).unwrap();
            let loss = build(&mut tape, &ids);
            tape.scalar(loss)
        });
        assert!(report.max_rel_error() <= 1e-6, "{}", report.max_rel_error());
    }

    // softmax-weighted neighbor sum, the attention building block
    #[test]
    fn attention_block_within_tolerance() {
        let mut params = ParamStore::new();
        params
            .add("h", 4, 3, standard_normal(&mut seeded_rng(8), 12))
            .unwrap();
        params
            .add("a", 6, 1, standard_normal(&mut seeded_rng(9), 6))
            .unwrap();
        let build = |tape: &mut Tape, ids: &HashMap<String, usize>| {
            let h = ids["h"];
            let srcs = tape.gather_rows(h, vec![0, 0, 1, 1]).unwrap();
            let dsts = tape.gather_rows(h, vec![2, 3, 2, 3]).unwrap();
            let cat = tape.concat_cols(srcs, dsts).unwrap();
            let scores = tape.matmul(cat, ids["a"]).unwrap();
            let scores = tape.leaky_relu(scores, 0.2).unwrap();
            let alpha = tape.grouped_softmax(scores, vec![0, 2, 4]).unwrap();
            let weighted = tape.mul_col_broadcast(dsts, alpha).unwrap();
            let agg = tape
                .segment_sum(weighted, vec![0, 2, 4], vec![0, 1], 4)
                .unwrap();
            let out = tape.add(h, agg).unwrap();
            let sq = tape.mul(out, out).unwrap();
            tape.sum(sq)
        };
        let analytic = grads_of(&params, build);
        let report = finite_difference_check(&mut params, &analytic, 1e-5, |ps| {
            let mut tape = Tape::new();
            let ids = ps.register_all(&mut tape).unwrap();
            let loss = build(&mut tape, &ids);
            tape.scalar(loss)
        });
        assert!(report.max_rel_error() <= 1e-4, "{}", report.max_rel_error());
    }
}
