use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use super::params::{LAMBDA, MIN_CHILD_WEIGHT};

const NONE: u32 = u32::MAX;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x < threshold` go left; missing values follow
    /// `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let v = x.value(row, *feature);
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        v < *threshold
                    };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
    left_g: f64,
    left_h: f64,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    node: usize,
    g: f64,
    h: f64,
}

fn leaf_value(g: f64, h: f64, learning_rate: f64) -> f64 {
    -g / (h + LAMBDA) * learning_rate
}

fn score(g: f64, h: f64) -> f64 {
    g * g / (h + LAMBDA)
}

/// Grows one tree level by level with exact greedy split search over the
/// `rows` sample and the `features` subset.
pub(crate) fn grow_tree(
    x: &FeatureMatrix,
    gh: &[[f64; 2]],
    rows: &[u32],
    features: &[usize],
    max_depth: usize,
    learning_rate: f64,
) -> Tree {
    let mut node_of = vec![NONE; x.rows()];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &r in rows {
        node_of[r as usize] = 0;
        g0 += gh[r as usize][0];
        h0 += gh[r as usize][1];
    }
    let mut nodes = vec![Node::Leaf {
        value: leaf_value(g0, h0, learning_rate),
    }];
    let mut slots = vec![Slot {
        node: 0,
        g: g0,
        h: h0,
    }];

    for depth in 0..max_depth {
        if slots.is_empty() {
            break;
        }
        let best = find_splits(x, gh, &node_of, &slots, features);
        let last_level = depth + 1 == max_depth;

        // Map each current slot to its (left, right) slots for the next level.
        let mut next_slots: Vec<Slot> = Vec::new();
        let mut routes: Vec<Option<(Candidate, u32, u32)>> = Vec::with_capacity(slots.len());
        for (slot, cand) in slots.iter().zip(&best) {
            let Some(c) = cand else {
                routes.push(None);
                continue;
            };
            let (lg, lh) = (c.left_g, c.left_h);
            let (rg, rh) = (slot.g - lg, slot.h - lh);
            let left = nodes.len();
            nodes.push(Node::Leaf {
                value: leaf_value(lg, lh, learning_rate),
            });
            let right = nodes.len();
            nodes.push(Node::Leaf {
                value: leaf_value(rg, rh, learning_rate),
            });
            nodes[slot.node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                gain: c.gain,
                left,
                right,
            };
            if last_level {
                routes.push(None);
            } else {
                let ls = next_slots.len() as u32;
                next_slots.push(Slot {
                    node: left,
                    g: lg,
                    h: lh,
                });
                next_slots.push(Slot {
                    node: right,
                    g: rg,
                    h: rh,
                });
                routes.push(Some((*c, ls, ls + 1)));
            }
        }
        if next_slots.is_empty() {
            break;
        }
        for &r in rows {
            let r = r as usize;
            let s = node_of[r];
            if s == NONE {
                continue;
            }
            node_of[r] = match &routes[s as usize] {
                Some((c, ls, rs)) => {
                    let v = x.value(r, c.feature);
                    let go_left = if v.is_nan() {
                        c.default_left
                    } else {
                        v < c.threshold
                    };
                    if go_left {
                        *ls
                    } else {
                        *rs
                    }
                }
                None => NONE,
            };
        }
        slots = next_slots;
    }
    Tree { nodes }
}

/// Best split per slot, scanning every feature's presorted rows once.
fn find_splits(
    x: &FeatureMatrix,
    gh: &[[f64; 2]],
    node_of: &[u32],
    slots: &[Slot],
    features: &[usize],
) -> Vec<Option<Candidate>> {
    let m = slots.len();
    let parent: Vec<f64> = slots.iter().map(|s| score(s.g, s.h)).collect();
    let mut best: Vec<Option<Candidate>> = vec![None; m];
    let mut miss = vec![[0.0; 2]; m];
    let mut miss_n = vec![0u32; m];
    let mut acc = vec![[0.0; 2]; m];
    let mut last = vec![f64::NAN; m];

    for &f in features {
        miss.fill([0.0; 2]);
        miss_n.fill(0);
        acc.fill([0.0; 2]);
        last.fill(f64::NAN);
        for &r in x.missing(f) {
            let s = node_of[r as usize];
            if s != NONE {
                let [g, h] = gh[r as usize];
                miss[s as usize][0] += g;
                miss[s as usize][1] += h;
                miss_n[s as usize] += 1;
            }
        }
        let mut consider = |s: usize, [ag, ah]: [f64; 2], threshold: f64, default_left: bool| {
            let slot = &slots[s];
            let (lg, lh) = if default_left {
                (ag + miss[s][0], ah + miss[s][1])
            } else {
                (ag, ah)
            };
            let (rg, rh) = (slot.g - lg, slot.h - lh);
            if lh < MIN_CHILD_WEIGHT || rh < MIN_CHILD_WEIGHT {
                return;
            }
            let gain = 0.5 * (score(lg, lh) + score(rg, rh) - parent[s]);
            if gain > MIN_GAIN && best[s].is_none_or(|b| gain > b.gain) {
                best[s] = Some(Candidate {
                    feature: f,
                    threshold,
                    default_left,
                    gain,
                    left_g: lg,
                    left_h: lh,
                });
            }
        };
        for (&r, &v) in x.sorted(f).iter().zip(x.sorted_values(f)) {
            let s = node_of[r as usize];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            let prev = last[s];
            if prev.is_nan() {
                if miss_n[s] > 0 {
                    // Only missing rows on the left.
                    consider(s, [0.0; 2], v, true);
                }
            } else if v > prev {
                consider(s, acc[s], v, false);
                if miss_n[s] > 0 {
                    consider(s, acc[s], v, true);
                }
            }
            let [g, h] = gh[r as usize];
            acc[s][0] += g;
            acc[s][1] += h;
            last[s] = v;
        }
        for s in 0..m {
            if miss_n[s] > 0 && !last[s].is_nan() {
                // Every present value left, missing right.
                consider(s, acc[s], f64::INFINITY, false);
            }
        }
    }
    best
}
