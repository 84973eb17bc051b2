//! Candidate selection by min-sum loopy belief propagation on the 4-connected pixel grid.
//!
//! The energy is the sum of per-pixel matching costs plus a truncated-linear coupling
//! `lambda * min(|d_x - d_y|, l_d)` on every grid edge. Each pixel may only take a value
//! from its own candidate set.
//!
//! Messages are evaluated at the receiver's candidate values. The truncated-linear
//! minimization is done with a lower envelope of cones over the sorted sender and receiver
//! values, so one message costs `O(k_sender + k_receiver)` instead of the product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateMap;
use crate::error::{Error, Result};
use crate::grid::{InvDepthMap, Pixel};

/// Normalization applied to each freshly computed message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageNorm {
    /// Subtract the log-sum-exp of the message entries.
    #[default]
    LogSumExp,
    /// Subtract the smallest entry.
    SubtractMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmParams {
    pub lambda: f64,
    /// Truncation of the coupling term [1/m].
    pub l_d: f64,
    pub max_iters: usize,
    /// Stop once the largest absolute message change drops below this.
    pub epsilon: f64,
    pub norm: MessageNorm,
}

impl Default for SsmParams {
    fn default() -> Self {
        SsmParams { lambda: 100.0, l_d: 0.05, max_iters: 60, epsilon: 1e-4, norm: MessageNorm::LogSumExp }
    }
}

impl SsmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        if !(self.l_d > 0.0 && self.l_d.is_finite()) {
            return Err(Error::Config("l_d must be finite and > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Source pixel in the sparse map of every selected value.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMap {
    width: usize,
    height: usize,
    sources: Vec<Pixel>,
}

impl SourceMap {
    pub fn new(width: usize, height: usize, sources: Vec<Pixel>) -> Result<Self> {
        if sources.len() != width * height {
            return Err(Error::Dimension("source map size mismatch".into()));
        }
        if sources.iter().any(|p| p.x >= width || p.y >= height) {
            return Err(Error::Domain("source pixel outside the image".into()));
        }
        Ok(SourceMap { width, height, sources })
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let sources = (0..width * height).map(|i| Pixel::from_index(i, width)).collect();
        SourceMap { width, height, sources }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Pixel {
        self.sources[y * self.width + x]
    }

    pub fn sources(&self) -> &[Pixel] {
        &self.sources
    }
}

#[derive(Debug, Clone)]
pub struct SsmOutput {
    pub depth: InvDepthMap,
    pub sources: SourceMap,
    /// Index into each pixel's candidate list of the selected candidate.
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Value of the selection energy for a labeling (indices into each pixel's candidate list).
pub fn ssm_energy(cm: &CandidateMap, labels: &[usize], params: &SsmParams) -> f64 {
    let (w, h) = (cm.width(), cm.height());
    let value = |x: usize, y: usize| cm.get(x, y)[labels[y * w + x]].d;
    let mut unary = 0.0;
    let mut pair = 0.0;
    for y in 0..h {
        for x in 0..w {
            unary += cm.get(x, y)[labels[y * w + x]].unary_cost;
            if x + 1 < w {
                pair += (value(x, y) - value(x + 1, y)).abs().min(params.l_d);
            }
            if y + 1 < h {
                pair += (value(x, y) - value(x, y + 1)).abs().min(params.l_d);
            }
        }
    }
    unary + params.lambda * pair
}

// Incoming-message directions: the neighbor sits left, right, above or below the receiver.
const LEFT: usize = 0;
const RIGHT: usize = 1;
const UP: usize = 2;
const DOWN: usize = 3;

#[inline]
fn opposite(dir: usize) -> usize {
    dir ^ 1
}

/// Candidates flattened in `(d, source row-major)` order per pixel.
struct Flat {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
    costs: Vec<f64>,
    /// Position in the original per-pixel list.
    original: Vec<usize>,
}

impl Flat {
    fn build(cm: &CandidateMap) -> Result<Self> {
        let mut offsets = Vec::with_capacity(cm.sets().len() + 1);
        let mut values = Vec::new();
        let mut costs = Vec::new();
        let mut original = Vec::new();
        offsets.push(0);
        for (i, set) in cm.sets().iter().enumerate() {
            if set.is_empty() {
                let p = Pixel::from_index(i, cm.width());
                return Err(Error::Precondition(format!("pixel ({}, {}) has no candidates", p.x, p.y)));
            }
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.sort_by(|&a, &b| {
                set[a]
                    .d
                    .total_cmp(&set[b].d)
                    .then_with(|| (set[a].source.y, set[a].source.x).cmp(&(set[b].source.y, set[b].source.x)))
            });
            for j in order {
                values.push(set[j].d);
                costs.push(set[j].unary_cost);
                original.push(j);
            }
            offsets.push(values.len());
        }
        Ok(Flat { width: cm.width(), height: cm.height(), offsets, values, costs, original })
    }

    #[inline]
    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    fn neighbor(&self, i: usize, dir: usize) -> Option<usize> {
        let (x, y) = (i % self.width, i / self.width);
        match dir {
            LEFT if x > 0 => Some(i - 1),
            RIGHT if x + 1 < self.width => Some(i + 1),
            UP if y > 0 => Some(i - self.width),
            DOWN if y + 1 < self.height => Some(i + self.width),
            _ => None,
        }
    }
}

/// `out[k] = min_j h[j] + lambda * min(|recv[k] - send[j]|, l_d)`, both value lists sorted ascending.
fn truncated_linear_min(send: &[f64], h: &[f64], recv: &[f64], lambda: f64, l_d: f64, out: &mut [f64]) {
    let floor = h.iter().copied().fold(f64::INFINITY, f64::min) + lambda * l_d;
    // Cones opening to the right: min over send <= d of h - lambda * send.
    let mut j = 0;
    let mut best = f64::INFINITY;
    for (k, &d) in recv.iter().enumerate() {
        while j < send.len() && send[j] <= d {
            best = best.min(h[j] - lambda * send[j]);
            j += 1;
        }
        out[k] = floor.min(best + lambda * d);
    }
    // Cones opening to the left: min over send >= d of h + lambda * send.
    let mut j = send.len();
    let mut best = f64::INFINITY;
    for (k, &d) in recv.iter().enumerate().rev() {
        while j > 0 && send[j - 1] >= d {
            j -= 1;
            best = best.min(h[j] + lambda * send[j]);
        }
        out[k] = out[k].min(best - lambda * d);
    }
}

fn normalize(msg: &mut [f64], norm: MessageNorm) {
    let shift = match norm {
        MessageNorm::SubtractMin => msg.iter().copied().fold(f64::INFINITY, f64::min),
        MessageNorm::LogSumExp => {
            // Numerically stable log-sum-exp.
            let max = msg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + msg.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        }
    };
    for v in msg {
        *v -= shift;
    }
}

/// Selects one candidate per pixel by min-sum loopy belief propagation.
pub fn lbp_select(cm: &CandidateMap, params: &SsmParams) -> Result<SsmOutput> {
    params.validate()?;
    let flat = Flat::build(cm)?;
    let n = cm.width() * cm.height();
    let total = flat.values.len();

    // msg[(slot) * 4 + dir]: message into the slot's pixel from its neighbor in `dir`.
    let mut msgs = vec![0.0f64; total * 4];
    let mut iterations = 0;
    let mut converged = params.lambda == 0.0;

    if !converged {
        let mut next = vec![0.0f64; total * 4];
        let max_k = (0..n).map(|i| flat.range(i).len()).max().unwrap_or(0);
        let row_bounds: Vec<(usize, usize)> =
            (0..flat.height).map(|y| (flat.offsets[y * flat.width], flat.offsets[(y + 1) * flat.width])).collect();

        while iterations < params.max_iters {
            iterations += 1;
            let mut rows: Vec<&mut [f64]> = Vec::with_capacity(flat.height);
            let mut rest: &mut [f64] = &mut next;
            for &(a, b) in &row_bounds {
                let (head, tail) = rest.split_at_mut((b - a) * 4);
                rows.push(head);
                rest = tail;
            }
            let change = rows
                .into_par_iter()
                .enumerate()
                .map(|(y, row)| {
                    let mut h = vec![0.0; max_k];
                    let mut out = vec![0.0; max_k];
                    let mut change = 0.0f64;
                    let row_start = row_bounds[y].0;
                    for x in 0..flat.width {
                        let i = y * flat.width + x;
                        let recv = flat.range(i);
                        let kr = recv.len();
                        for dir in 0..4 {
                            let Some(s) = flat.neighbor(i, dir) else { continue };
                            let send = flat.range(s);
                            let ks = send.len();
                            let skip = opposite(dir);
                            for (j, slot) in send.clone().enumerate() {
                                let mut acc = flat.costs[slot];
                                for e in 0..4 {
                                    if e != skip && flat.neighbor(s, e).is_some() {
                                        acc += msgs[slot * 4 + e];
                                    }
                                }
                                h[j] = acc;
                            }
                            truncated_linear_min(
                                &flat.values[send],
                                &h[..ks],
                                &flat.values[recv.clone()],
                                params.lambda,
                                params.l_d,
                                &mut out[..kr],
                            );
                            normalize(&mut out[..kr], params.norm);
                            for (k, slot) in recv.clone().enumerate() {
                                let local = (slot - row_start) * 4 + dir;
                                change = change.max((out[k] - msgs[slot * 4 + dir]).abs());
                                row[local] = out[k];
                            }
                        }
                    }
                    change
                })
                .reduce(|| 0.0, f64::max);
            std::mem::swap(&mut msgs, &mut next);
            if change < params.epsilon {
                converged = true;
                break;
            }
        }
    }

    let labels: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, 0usize);
            for (k, slot) in flat.range(i).enumerate() {
                let mut belief = flat.costs[slot];
                for dir in 0..4 {
                    if flat.neighbor(i, dir).is_some() {
                        belief += msgs[slot * 4 + dir];
                    }
                }
                if belief < best.0 {
                    best = (belief, k);
                }
            }
            flat.original[flat.offsets[i] + best.1]
        })
        .collect();

    let (w, h) = (cm.width(), cm.height());
    let mut depth = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (i, &l) in labels.iter().enumerate() {
        let c = cm.sets()[i][l];
        depth.push(c.d);
        sources.push(c.source);
    }
    Ok(SsmOutput {
        depth: InvDepthMap::from_dense(w, h, depth)?,
        sources: SourceMap { width: w, height: h, sources },
        labels,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_map(w: usize, h: usize, max_k: usize, rng: &mut ChaCha8Rng) -> CandidateMap {
        let sets = (0..w * h)
            .map(|i| {
                let k = rng.gen_range(1..=max_k);
                (0..k)
                    .map(|_| {
                        let mut c = Candidate::new(rng.gen_range(0.01..0.2), Pixel::from_index(i, w));
                        c.unary_cost = rng.gen_range(0.0..10.0);
                        c
                    })
                    .collect()
            })
            .collect();
        CandidateMap::new(w, h, sets).unwrap()
    }

    fn brute_force(cm: &CandidateMap, params: &SsmParams) -> f64 {
        let sizes: Vec<usize> = cm.sets().iter().map(Vec::len).collect();
        let mut labels = vec![0usize; sizes.len()];
        let mut best = f64::INFINITY;
        loop {
            best = best.min(ssm_energy(cm, &labels, params));
            let mut i = 0;
            loop {
                if i == labels.len() {
                    return best;
                }
                labels[i] += 1;
                if labels[i] < sizes[i] {
                    break;
                }
                labels[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn envelope_matches_naive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut send: Vec<f64> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut recv: Vec<f64> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0.0..1.0)).collect();
            send.sort_by(f64::total_cmp);
            recv.sort_by(f64::total_cmp);
            let h: Vec<f64> = send.iter().map(|_| rng.gen_range(0.0..5.0)).collect();
            let (lambda, l_d) = (rng.gen_range(0.0..20.0), rng.gen_range(0.01..0.5));
            let mut out = vec![0.0; recv.len()];
            truncated_linear_min(&send, &h, &recv, lambda, l_d, &mut out);
            for (k, d) in recv.iter().enumerate() {
                let naive = send
                    .iter()
                    .zip(&h)
                    .map(|(s, hv)| hv + lambda * (d - s).abs().min(l_d))
                    .fold(f64::INFINITY, f64::min);
                assert!((out[k] - naive).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_coupling_is_unary_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cm = random_map(6, 5, 4, &mut rng);
        let out = lbp_select(&cm, &SsmParams { lambda: 0.0, ..Default::default() }).unwrap();
        for (i, set) in cm.sets().iter().enumerate() {
            let best = set.iter().map(|c| c.unary_cost).fold(f64::INFINITY, f64::min);
            assert_eq!(set[out.labels[i]].unary_cost, best);
        }
    }

    #[test]
    fn chains_reach_global_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..40 {
            let n = rng.gen_range(2..=8);
            let cm = if trial % 2 == 0 { random_map(n, 1, 4, &mut rng) } else { random_map(1, n, 4, &mut rng) };
            let params = SsmParams { lambda: rng.gen_range(1.0..200.0), ..Default::default() };
            let out = lbp_select(&cm, &params).unwrap();
            let got = ssm_energy(&cm, &out.labels, &params);
            let best = brute_force(&cm, &params);
            assert!((got - best).abs() <= 1e-9 * best.abs().max(1.0), "trial {trial}: {got} vs {best}");
        }
    }

    #[test]
    fn normalization_choice_does_not_change_selection_on_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cm = random_map(7, 1, 3, &mut rng);
            let a = lbp_select(&cm, &SsmParams::default()).unwrap();
            let b = lbp_select(&cm, &SsmParams { norm: MessageNorm::SubtractMin, ..Default::default() }).unwrap();
            assert_eq!(a.labels, b.labels);
        }
    }

    #[test]
    fn loopy_grids_rarely_worse_than_unary_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = SsmParams { lambda: 50.0, ..Default::default() };
        let edges = 12.0;
        let mut not_worse = 0;
        for _ in 0..100 {
            let cm = random_map(3, 3, 3, &mut rng);
            let out = lbp_select(&cm, &params).unwrap();
            let unary: Vec<usize> = cm
                .sets()
                .iter()
                .map(|s| (0..s.len()).min_by(|&a, &b| s[a].unary_cost.total_cmp(&s[b].unary_cost)).unwrap())
                .collect();
            let e_lbp = ssm_energy(&cm, &out.labels, &params);
            let e_unary = ssm_energy(&cm, &unary, &params);
            assert!(e_lbp <= e_unary + params.l_d * params.lambda * edges);
            if e_lbp <= e_unary + 1e-9 {
                not_worse += 1;
            }
        }
        assert!(not_worse >= 95, "{not_worse}");
    }

    #[test]
    fn outputs_are_members_and_sources_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cm = random_map(9, 7, 5, &mut rng);
        let out = lbp_select(&cm, &SsmParams::default()).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let d = out.depth.get(x, y).unwrap();
                let set = cm.get(x, y);
                assert!(set.iter().any(|c| c.d == d && c.source == out.sources.get(x, y)));
            }
        }
    }

    #[test]
    fn empty_set_is_precondition_error() {
        let cm = CandidateMap::new(2, 1, vec![vec![Candidate::new(0.1, Pixel::new(0, 0))], vec![]]).unwrap();
        assert!(matches!(lbp_select(&cm, &SsmParams::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn messages_stay_finite_with_large_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cm = random_map(8, 8, 4, &mut rng);
        let sets = cm
            .sets()
            .iter()
            .map(|s| s.iter().map(|c| Candidate { unary_cost: c.unary_cost * 1e4, ..*c }).collect())
            .collect();
        cm = CandidateMap::new(8, 8, sets).unwrap();
        let out = lbp_select(&cm, &SsmParams { max_iters: 200, epsilon: 0.0, ..Default::default() }).unwrap();
        assert!(out.depth.values().iter().all(|v| v.unwrap().is_finite()));
    }
}
