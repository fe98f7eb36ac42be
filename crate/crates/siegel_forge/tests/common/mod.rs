//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use siegel_forge::chains::{crooked_embedding_witness, standard_chain, verify_witness, CircularChain};
use siegel_forge::geom::Polygon;

// Independent check of the back-and-forth condition by exhaustive search.
pub fn naive_conditions(f: &dyn Fn(i64) -> i64, mp: i64, m: i64, reach: i64) -> bool {
    for i in 0..mp {
        if (f(i + 1) - f(i)).abs() > 1 {
            return false;
        }
    }
    for i in 0..mp {
        for j in i - reach..=i + reach {
            let d = f(j) - f(i);
            if d <= 2 || d >= m {
                continue;
            }
            let between: Vec<i64> = if j > i { (i + 1..j).collect() } else { (j + 1..i).rev().collect() };
            let mut found = false;
            'outer: for (ri, &r) in between.iter().enumerate() {
                if f(r) != f(j) - 1 {
                    continue;
                }
                for &s in &between[ri + 1..] {
                    if f(s) == f(i) + 1 {
                        found = true;
                        break 'outer;
                    }
                }
            }
            if !found {
                return false;
            }
        }
    }
    true
}

/// Lifted outer indices u with [c - a, c + a] inside ]u - 1/4, u + 5/4[.
pub fn lifted_options(c: f64, a: f64) -> Vec<i64> {
    let lo = (c + a - 1.25).floor() as i64;
    let hi = (c - a + 0.25).ceil() as i64;
    (lo..=hi).filter(|&u| (u as f64) - 0.25 < c - a && c + a < u as f64 + 1.25).collect()
}

pub fn oracle_exists(centers: &[f64], widths: &[f64], m: i64) -> bool {
    let mp = centers.len() as i64;
    let opts: Vec<Vec<i64>> = centers.iter().zip(widths).map(|(&c, &a)| lifted_options(c, a)).collect();
    if opts.iter().any(|o| o.is_empty()) {
        return false;
    }
    let total: usize = opts.iter().map(|o| o.len()).product();
    for mut code in 0..total {
        let mut f = Vec::with_capacity(opts.len());
        for o in &opts {
            f.push(o[code % o.len()]);
            code /= o.len();
        }
        let g = |j: i64| f[j.rem_euclid(mp) as usize] + j.div_euclid(mp) * m;
        if naive_conditions(&g, mp, m, 3 * mp) {
            return true;
        }
    }
    false
}

/// A random inner chain of rectangles on C/mZ (m' <= 30) against C_m, or None
/// when too many links have two possible outer links for the brute force.
pub fn random_pair(rng: &mut ChaCha8Rng) -> Option<(usize, Vec<f64>, Vec<f64>, CircularChain, CircularChain)> {
    let m = rng.gen_range(5..=8usize);
    let mp = 2 * m + 2 * rng.gen_range(0..=(30 - 2 * m) / 2);
    // walk of +-1/2 steps with net displacement m
    let ups = (mp + 2 * m) / 2;
    let mut steps: Vec<f64> = (0..mp).map(|i| if i < ups { 0.5 } else { -0.5 }).collect();
    for i in (1..mp).rev() {
        steps.swap(i, rng.gen_range(0..=i));
    }
    let mut centers = vec![0.5];
    for s in &steps[..mp - 1] {
        let c = centers.last().unwrap() + s;
        centers.push(c);
    }
    let widths: Vec<f64> = (0..mp).map(|_| if rng.gen_bool(0.9) { 0.2 } else { 0.3 }).collect();
    let doubles = centers
        .iter()
        .zip(&widths)
        .filter(|(c, a)| lifted_options(**c, **a).len() > 1)
        .count();
    if doubles > 8 {
        return None;
    }
    let links: Vec<Polygon> = centers
        .iter()
        .zip(&widths)
        .map(|(c, a)| Polygon::rect(c - a, c + a, 0.2, 0.8))
        .collect();
    let inner = CircularChain::new(m as u64, links).unwrap();
    let outer = standard_chain(m).unwrap();
    Some((m, centers, widths, inner, outer))
}

/// Compares the witness search with the exhaustive oracle on one pair;
/// Err describes a disagreement.
pub fn compare_with_oracle(m: usize, centers: &[f64], widths: &[f64], inner: &CircularChain, outer: &CircularChain) -> Result<bool, String> {
    let mp = centers.len();
    let expected = oracle_exists(centers, widths, m as i64);
    let got = crooked_embedding_witness(inner, outer);
    if got.is_some() != expected {
        return Err(format!("m = {m}, m' = {mp}: search {} vs oracle {expected}", got.is_some()));
    }
    if let Some(w) = got {
        if !verify_witness(&w, inner, outer) {
            return Err(format!("m = {m}, m' = {mp}: witness does not verify"));
        }
        let f = &w.f_values;
        let g = |j: i64| f[j.rem_euclid(mp as i64) as usize] + j.div_euclid(mp as i64) * m as i64;
        if !naive_conditions(&g, mp as i64, m as i64, 3 * mp as i64) {
            return Err(format!("m = {m}, m' = {mp}: witness fails the naive conditions"));
        }
    }
    Ok(expected)
}

/// The two-level tower of the default configuration in best-effort mode.
pub fn best_effort_tower() -> siegel_forge::tower::TowerState {
    use siegel_forge::tower::{advance_level, init_tower_with, TowerOptions};
    let opts = TowerOptions { best_effort: true, ..TowerOptions::default() };
    let base = init_tower_with(1.0, 5, opts).unwrap();
    advance_level(&base, None).unwrap()
}
