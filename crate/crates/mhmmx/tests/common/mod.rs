//! Independent oracles used by the acceptance suite. Everything here is
//! deliberately written from the direct formulas, sharing no code paths with
//! the library implementations it checks.

use mhmmx::data::Observation;
use mhmmx::hmm::{path_log_score, SubgroupHMM};

/// Total log-likelihood by brute-force enumeration over all S^T latent
/// paths, each scored independently.
pub fn enumerate_loglik(m: &SubgroupHMM, traj: &[Observation]) -> f64 {
    let s = m.n_states();
    let t = traj.len();
    let mut best = f64::NEG_INFINITY;
    let mut scores = Vec::with_capacity(s.pow(t as u32));
    let mut path = vec![0usize; t];
    loop {
        let score = path_log_score(m, traj, &path).expect("valid path");
        best = best.max(score);
        scores.push(score);
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                let total = best
                    + scores
                        .iter()
                        .map(|&x| (x - best).exp())
                        .sum::<f64>()
                        .ln();
                return total;
            }
            path[i] += 1;
            if path[i] < s {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Best path score by brute-force enumeration.
pub fn enumerate_best_path_score(m: &SubgroupHMM, traj: &[Observation]) -> f64 {
    let s = m.n_states();
    let t = traj.len();
    let mut best = f64::NEG_INFINITY;
    let mut path = vec![0usize; t];
    loop {
        best = best.max(path_log_score(m, traj, &path).expect("valid path"));
        let mut i = 0;
        loop {
            if i == t {
                return best;
            }
            path[i] += 1;
            if path[i] < s {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn centroid(points: &[&Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for p in points {
        for (ci, &v) in c.iter_mut().zip(p.iter()) {
            *ci += v;
        }
    }
    for ci in &mut c {
        *ci /= points.len() as f64;
    }
    c
}

fn clusters<'a>(points: &'a [Vec<f64>], labels: &[usize]) -> Vec<Vec<&'a Vec<f64>>> {
    let k = labels.iter().max().unwrap() + 1;
    let mut out = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        out[l].push(p);
    }
    out
}

/// Calinski-Harabasz with unsquared centroid distances:
/// `((N-K)/(K-1)) * sum_k n_k d(ybar, c_k) / sum_k n_k S(c_k)` where `S` is
/// the mean member-to-centroid distance. `None` if the within term is zero.
pub fn oracle_ch(points: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let cl = clusters(points, labels);
    let k = cl.len();
    let n = points.len();
    let all: Vec<&Vec<f64>> = points.iter().collect();
    let global = centroid(&all);
    let mut between = 0.0;
    let mut within = 0.0;
    for members in &cl {
        let c = centroid(members);
        between += members.len() as f64 * dist(&global, &c);
        let s: f64 = members.iter().map(|p| dist(p, &c)).sum::<f64>() / members.len() as f64;
        within += members.len() as f64 * s;
    }
    if within == 0.0 {
        return None;
    }
    Some(((n - k) as f64 / (k - 1) as f64) * between / within)
}

/// Silhouette with the self-inclusive `a` term: `a(i)` divides by the full
/// cluster size, including the zero self-distance.
pub fn oracle_sil(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let cl = clusters(points, labels);
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        let a: f64 = cl[own].iter().map(|q| dist(p, q)).sum::<f64>() / cl[own].len() as f64;
        let b = cl
            .iter()
            .enumerate()
            .filter(|(l, members)| *l != own && !members.is_empty())
            .map(|(_, members)| {
                members.iter().map(|q| dist(p, q)).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    total / points.len() as f64
}

/// DB*: `(1/K) sum_k max_{l != k}(S_k + S_l) / min_{l != k} d(c_k, c_l)`.
/// `None` if any two centroids coincide.
pub fn oracle_db_star(points: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let cl = clusters(points, labels);
    let k = cl.len();
    let cents: Vec<Vec<f64>> = cl.iter().map(|m| centroid(m)).collect();
    let s: Vec<f64> = cl
        .iter()
        .zip(&cents)
        .map(|(members, c)| {
            members.iter().map(|p| dist(p, c)).sum::<f64>() / members.len() as f64
        })
        .collect();
    let mut total = 0.0;
    for kk in 0..k {
        let mut max_sum = f64::NEG_INFINITY;
        let mut min_d = f64::INFINITY;
        for ll in 0..k {
            if ll == kk {
                continue;
            }
            max_sum = max_sum.max(s[kk] + s[ll]);
            min_d = min_d.min(dist(&cents[kk], &cents[ll]));
        }
        if min_d == 0.0 {
            return None;
        }
        total += max_sum / min_d;
    }
    Some(total / k as f64)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Prints the acceptance line for one criterion and panics on failure.
pub fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion} ({name}): {verdict} — {detail}");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}
