//! Level-wise growth of a single regression tree on gradient statistics.

use rayon::prelude::*;

use super::{Tree, TreeNode};
use crate::volume::RowMatrix;

const NONE: u32 = u32::MAX;
const MIN_GAIN: f64 = 1e-10;

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
}

/// Column-major view of the training features used for split search.
pub(crate) enum ColumnData {
    Exact {
        values: Vec<Vec<f32>>,
        /// Row indices of each column sorted by value.
        order: Vec<Vec<u32>>,
    },
    Binned {
        bins: Vec<Vec<u8>>,
        /// Strictly increasing cut points; bin `b` holds `cuts[b-1] <= x < cuts[b]`.
        cuts: Vec<Vec<f32>>,
    },
}

fn midpoint(lo: f32, hi: f32) -> f32 {
    let t = ((lo as f64 + hi as f64) * 0.5) as f32;
    if t > lo {
        t
    } else {
        hi
    }
}

fn column(features: &RowMatrix, f: usize) -> Vec<f32> {
    (0..features.rows).map(|i| features.get(i, f)).collect()
}

fn quantile_cuts(col: &[f32], n_bins: usize) -> Vec<f32> {
    let mut sorted = col.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= n_bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f32> = (1..n_bins).map(|j| sorted[j * n / n_bins]).collect();
    cuts.dedup();
    cuts.retain(|&c| c > sorted[0]);
    cuts
}

impl ColumnData {
    pub fn build(features: &RowMatrix, exact_max_samples: usize, n_bins: usize) -> Self {
        let d = features.cols;
        if features.rows <= exact_max_samples {
            let values: Vec<Vec<f32>> = (0..d).into_par_iter().map(|f| column(features, f)).collect();
            let order = values
                .par_iter()
                .map(|col| {
                    let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                    idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                    idx
                })
                .collect();
            ColumnData::Exact { values, order }
        } else {
            let n_bins = n_bins.clamp(2, 256);
            let (bins, cuts) = (0..d)
                .into_par_iter()
                .map(|f| {
                    let col = column(features, f);
                    let cuts = quantile_cuts(&col, n_bins);
                    let bins = col
                        .iter()
                        .map(|&x| cuts.partition_point(|&c| c <= x) as u8)
                        .collect();
                    (bins, cuts)
                })
                .unzip();
            ColumnData::Binned { bins, cuts }
        }
    }

    #[inline]
    fn goes_left(&self, f: usize, i: usize, split: &Split) -> bool {
        match self {
            ColumnData::Exact { values, .. } => values[f][i] < split.threshold,
            ColumnData::Binned { bins, .. } => (bins[f][i] as usize) < split.bin,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f32,
    bin: usize,
    gl: f64,
    hl: f64,
}

#[derive(Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
}

struct Scorer<'a> {
    p: &'a GrowParams,
}

impl Scorer<'_> {
    #[inline]
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.p.lambda)
    }

    #[inline]
    fn gain(&self, parent: NodeStats, gl: f64, hl: f64) -> Option<f64> {
        let hr = parent.h - hl;
        if hl < self.p.min_child_weight || hr < self.p.min_child_weight {
            return None;
        }
        let gain = 0.5
            * (self.score(gl, hl) + self.score(parent.g - gl, hr) - self.score(parent.g, parent.h))
            - self.p.gamma;
        (gain > MIN_GAIN).then_some(gain)
    }
}

fn better(cur: &Option<Split>, gain: f64) -> bool {
    cur.as_ref().is_none_or(|s| gain > s.gain)
}

#[allow(clippy::too_many_arguments)]
fn best_exact(
    values: &[f32],
    order: &[u32],
    f: usize,
    pos: &[u32],
    slot_of: &[u32],
    stats: &[NodeStats],
    grad: &[f64],
    hess: &[f64],
    scorer: &Scorer,
) -> Vec<Option<Split>> {
    let s = stats.len();
    let mut gl = vec![0.0; s];
    let mut hl = vec![0.0; s];
    let mut last = vec![0f32; s];
    let mut seen = vec![false; s];
    let mut best: Vec<Option<Split>> = vec![None; s];
    for &i in order {
        let i = i as usize;
        let node = pos[i];
        if node == NONE {
            continue;
        }
        let j = slot_of[node as usize] as usize;
        let v = values[i];
        if seen[j] && v != last[j] {
            if let Some(gain) = scorer.gain(stats[j], gl[j], hl[j]) {
                if better(&best[j], gain) {
                    best[j] = Some(Split {
                        gain,
                        feature: f,
                        threshold: midpoint(last[j], v),
                        bin: 0,
                        gl: gl[j],
                        hl: hl[j],
                    });
                }
            }
        }
        gl[j] += grad[i];
        hl[j] += hess[i];
        last[j] = v;
        seen[j] = true;
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn best_binned(
    bins: &[u8],
    cuts: &[f32],
    f: usize,
    pos: &[u32],
    slot_of: &[u32],
    stats: &[NodeStats],
    grad: &[f64],
    hess: &[f64],
    scorer: &Scorer,
) -> Vec<Option<Split>> {
    let s = stats.len();
    let nb = cuts.len() + 1;
    let mut best: Vec<Option<Split>> = vec![None; s];
    if nb < 2 {
        return best;
    }
    let mut hg = vec![0.0; s * nb];
    let mut hh = vec![0.0; s * nb];
    for (i, &node) in pos.iter().enumerate() {
        if node == NONE {
            continue;
        }
        let k = slot_of[node as usize] as usize * nb + bins[i] as usize;
        hg[k] += grad[i];
        hh[k] += hess[i];
    }
    for j in 0..s {
        let (mut gl, mut hl) = (0.0, 0.0);
        for b in 1..nb {
            gl += hg[j * nb + b - 1];
            hl += hh[j * nb + b - 1];
            if hh[j * nb + b - 1] == 0.0 && b > 1 {
                continue;
            }
            if let Some(gain) = scorer.gain(stats[j], gl, hl) {
                if better(&best[j], gain) {
                    best[j] = Some(Split {
                        gain,
                        feature: f,
                        threshold: cuts[b - 1],
                        bin: b,
                        gl,
                        hl,
                    });
                }
            }
        }
    }
    best
}

/// Breaks an exact gain tie by the partitions the two candidates induce,
/// not by column position: at the first row of `node` they route
/// differently, the candidate sending it left wins. Keeps the fitted trees
/// equivariant under column permutations.
fn wins_tie(data: &ColumnData, pos: &[u32], node: usize, c: &Split, cur: &Split) -> bool {
    pos.iter()
        .enumerate()
        .filter(|&(_, &n)| n as usize == node)
        .map(|(i, _)| (data.goes_left(c.feature, i, c), data.goes_left(cur.feature, i, cur)))
        .find(|(l, r)| l != r)
        .is_some_and(|(l, _)| l)
}

fn leaf_value(st: NodeStats, p: &GrowParams) -> f32 {
    (-st.g / (st.h + p.lambda) * p.learning_rate) as f32
}

/// Grows one tree on the rows flagged in `in_sample`, searching only the
/// features listed in `cols`.
pub(crate) fn grow_tree(
    data: &ColumnData,
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    cols: &[usize],
    p: &GrowParams,
) -> Tree {
    let scorer = Scorer { p };
    let mut pos: Vec<u32> = in_sample.iter().map(|&s| if s { 0 } else { NONE }).collect();
    let (mut g, mut h) = (0.0, 0.0);
    for (i, &s) in in_sample.iter().enumerate() {
        if s {
            g += grad[i];
            h += hess[i];
        }
    }
    let mut nodes = vec![TreeNode::leaf(0.0)];
    let mut node_stats = vec![NodeStats { g, h }];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![NONE; nodes.len()];
        for (j, &node) in frontier.iter().enumerate() {
            slot_of[node] = j as u32;
        }
        let stats: Vec<NodeStats> = frontier.iter().map(|&n| node_stats[n]).collect();
        let per_feature: Vec<Vec<Option<Split>>> = cols
            .par_iter()
            .map(|&f| match data {
                ColumnData::Exact { values, order } => best_exact(
                    &values[f], &order[f], f, &pos, &slot_of, &stats, grad, hess, &scorer,
                ),
                ColumnData::Binned { bins, cuts } => best_binned(
                    &bins[f], &cuts[f], f, &pos, &slot_of, &stats, grad, hess, &scorer,
                ),
            })
            .collect();
        let mut best: Vec<Option<Split>> = vec![None; frontier.len()];
        for cand in &per_feature {
            for (j, (b, c)) in best.iter_mut().zip(cand).enumerate() {
                if let Some(c) = c {
                    let wins = match b {
                        None => true,
                        Some(cur) if c.gain == cur.gain => wins_tie(data, &pos, frontier[j], c, cur),
                        Some(cur) => c.gain > cur.gain,
                    };
                    if wins {
                        *b = Some(*c);
                    }
                }
            }
        }

        // child slots: 2j (left) and 2j+1 (right) in the next frontier
        let mut next = Vec::new();
        let mut route: Vec<Option<(Split, u32, u32)>> = vec![None; frontier.len()];
        for (j, &node) in frontier.iter().enumerate() {
            let st = node_stats[node];
            match best[j] {
                Some(split) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(TreeNode::leaf(0.0));
                    nodes.push(TreeNode::leaf(0.0));
                    node_stats.push(NodeStats { g: split.gl, h: split.hl });
                    node_stats.push(NodeStats {
                        g: st.g - split.gl,
                        h: st.h - split.hl,
                    });
                    nodes[node] = TreeNode {
                        feature: split.feature as i32,
                        threshold: split.threshold,
                        left: left as i32,
                        right: right as i32,
                        value: 0.0,
                    };
                    next.push(left);
                    next.push(right);
                    route[j] = Some((split, left as u32, right as u32));
                }
                None => nodes[node] = TreeNode::leaf(leaf_value(st, p)),
            }
        }
        pos.par_iter_mut().enumerate().for_each(|(i, node)| {
            if *node == NONE {
                return;
            }
            let j = slot_of[*node as usize];
            *node = match route[j as usize] {
                Some((split, l, r)) => {
                    if data.goes_left(split.feature, i, &split) {
                        l
                    } else {
                        r
                    }
                }
                None => NONE,
            };
        });
        frontier = next;
    }
    for &node in &frontier {
        nodes[node] = TreeNode::leaf(leaf_value(node_stats[node], p));
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GrowParams {
        GrowParams {
            max_depth: 3,
            min_child_weight: 0.0,
            lambda: 0.0,
            gamma: 0.0,
            learning_rate: 1.0,
        }
    }

    #[test]
    fn single_split_on_step_gradient() {
        // grad -1 on x < 2, +1 otherwise; unit hessians. With lambda = 0 the
        // best stump splits at 2 with leaf values +1 and -1.
        let x = RowMatrix::new(4, 1, vec![0.0, 1.0, 3.0, 4.0]).unwrap();
        let grad = [-1.0, -1.0, 1.0, 1.0];
        let hess = [1.0; 4];
        let p = GrowParams { max_depth: 1, ..params() };
        for data in [ColumnData::build(&x, 100, 256), ColumnData::build(&x, 0, 256)] {
            let t = grow_tree(&data, &grad, &hess, &[true; 4], &[0], &p);
            assert_eq!(t.nodes.len(), 3);
            assert_eq!(t.nodes[0].threshold, 2.0);
            assert_eq!(t.predict(&[0.5]), 1.0);
            assert_eq!(t.predict(&[3.5]), -1.0);
        }
    }

    #[test]
    fn unsampled_rows_are_ignored() {
        let x = RowMatrix::new(4, 1, vec![0.0, 1.0, 3.0, 4.0]).unwrap();
        let grad = [-1.0, -1.0, 1.0, 100.0];
        let hess = [1.0; 4];
        let t = grow_tree(
            &ColumnData::build(&x, 100, 256),
            &grad,
            &hess,
            &[true, true, true, false],
            &[0],
            &GrowParams { max_depth: 1, ..params() },
        );
        assert_eq!(t.predict(&[10.0]), -1.0);
    }

    #[test]
    fn quantile_cuts_are_increasing() {
        let col: Vec<f32> = (0..10_000).map(|i| ((i * 7919) % 1000) as f32).collect();
        let cuts = quantile_cuts(&col, 256);
        assert!(cuts.len() <= 255);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }
}
