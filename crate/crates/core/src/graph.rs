//! Directed interaction graph: strong connectivity and communicating classes.
//!
//! Agent `i` listens to agent `j` when `sigma[(i, j)] > tolerance_zero`, which
//! gives the arc `i -> j`. Strongly connected components are computed with an
//! iterative Tarjan traversal, then relabeled so that component ids appear in
//! order of their smallest member. That keeps the output independent of the
//! traversal order.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraphSummary {
    pub n: usize,
    pub scc_assignment: Vec<usize>,
    pub component_count: usize,
    pub is_strongly_connected: bool,
    /// Components with no arc leaving them, sorted ascending.
    pub closed_classes: Vec<usize>,
}

impl DiGraphSummary {
    /// Members of each component, indexed by component id. Members are sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.component_count];
        for (agent, &c) in self.scc_assignment.iter().enumerate() {
            out[c].push(agent);
        }
        out
    }

    pub fn is_closed(&self, component: usize) -> bool {
        self.closed_classes.binary_search(&component).is_ok()
    }
}

/// Adjacency lists for arcs `{(i, j) : i != j, sigma_ij > tolerance_zero}`.
pub fn arcs(sigma: &DMatrix<f64>, tolerance_zero: f64) -> Vec<Vec<usize>> {
    let n = sigma.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && sigma[(i, j)] > tolerance_zero)
                .collect()
        })
        .collect()
}

pub fn analyze_graph(sigma: &DMatrix<f64>, tolerance_zero: f64) -> Result<DiGraphSummary> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::NotSquare {
            rows: sigma.nrows(),
            cols: sigma.ncols(),
        });
    }
    let adjacency = arcs(sigma, tolerance_zero);
    Ok(summarize(&adjacency))
}

pub fn require_strong_connectivity(summary: &DiGraphSummary) -> Result<()> {
    if summary.is_strongly_connected {
        Ok(())
    } else {
        Err(Error::NotStronglyConnected {
            component_count: summary.component_count,
            components: summary.components(),
            closed_classes: summary.closed_classes.clone(),
        })
    }
}

/// Builds the summary from explicit adjacency lists.
pub fn summarize(adjacency: &[Vec<usize>]) -> DiGraphSummary {
    let n = adjacency.len();
    let raw = tarjan(adjacency);

    // Relabel by first appearance in agent order.
    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    let mut assignment = vec![0; n];
    for agent in 0..n {
        let r = raw[agent];
        if relabel[r] == usize::MAX {
            relabel[r] = next;
            next += 1;
        }
        assignment[agent] = relabel[r];
    }
    let component_count = next;

    let mut has_exit = vec![false; component_count];
    for (i, targets) in adjacency.iter().enumerate() {
        for &j in targets {
            if assignment[i] != assignment[j] {
                has_exit[assignment[i]] = true;
            }
        }
    }
    let closed_classes = (0..component_count).filter(|&c| !has_exit[c]).collect();

    DiGraphSummary {
        n,
        scc_assignment: assignment,
        component_count,
        is_strongly_connected: component_count == 1,
        closed_classes,
    }
}

/// Iterative Tarjan. Returns a raw component label per vertex.
fn tarjan(adjacency: &[Vec<usize>]) -> Vec<usize> {
    const UNVISITED: usize = usize::MAX;
    let n = adjacency.len();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::with_capacity(n);
    let mut component = vec![UNVISITED; n];
    let mut next_index = 0;
    let mut next_component = 0;
    // (vertex, position in its adjacency list)
    let mut call_stack: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call_stack.push((root, 0));
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut edge)) = call_stack.last_mut() {
            if let Some(&w) = adjacency[v].get(*edge) {
                *edge += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
                continue;
            }

            call_stack.pop();
            if let Some(&(parent, _)) = call_stack.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index[v] {
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component[w] = next_component;
                    if w == v {
                        break;
                    }
                }
                next_component += 1;
            }
        }
    }
    component
}
