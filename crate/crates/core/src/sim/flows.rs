//! Max-min fair rate allocation of backlogged flows over shared links, each
//! flow additionally capped by its own wireless rate.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Flow<L> {
    pub cap_mbps: f64,
    pub links: Vec<L>,
}

/// Progressive filling: raise all unfrozen flows together until a flow hits
/// its cap or a link saturates, freeze those, repeat.
pub fn max_min_fair<L: Ord + Clone>(flows: &[Flow<L>], capacity: &BTreeMap<L, f64>) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    let mut rate = vec![0.0; flows.len()];
    let mut frozen: Vec<bool> = flows.iter().map(|f| f.cap_mbps <= 0.0).collect();
    let mut residual = capacity.clone();
    loop {
        let active: Vec<usize> = (0..flows.len()).filter(|&i| !frozen[i]).collect();
        if active.is_empty() {
            break;
        }
        let mut step = f64::INFINITY;
        for &i in &active {
            step = step.min(flows[i].cap_mbps - rate[i]);
        }
        for (link, cap) in &residual {
            let users = active.iter().filter(|&&i| flows[i].links.contains(link)).count();
            if users > 0 {
                step = step.min(cap / users as f64);
            }
        }
        let step = step.max(0.0);
        for &i in &active {
            rate[i] += step;
            for l in &flows[i].links {
                if let Some(c) = residual.get_mut(l) {
                    *c -= step;
                }
            }
        }
        for &i in &active {
            let saturated = flows[i].links.iter().any(|l| residual.get(l).is_some_and(|c| *c <= EPS));
            if rate[i] >= flows[i].cap_mbps - EPS || saturated {
                frozen[i] = true;
            }
        }
    }
    rate
}
