//! Composite Simpson rule on uniform nodes.

/// Integrates `f` over `[a, b]` with composite Simpson on `nodes` points.
///
/// An even `nodes` is bumped to the next odd count so the panel count is even.
/// Fewer than three nodes is treated as three.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, nodes: usize) -> f64 {
    let nodes = odd_nodes(nodes);
    let panels = nodes - 1;
    let h = (b - a) / panels as f64;
    if h == 0.0 {
        return 0.0;
    }
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Node count actually used by [`simpson`] for a requested count.
pub fn odd_nodes(nodes: usize) -> usize {
    let nodes = nodes.max(3);
    if nodes.is_multiple_of(2) {
        nodes + 1
    } else {
        nodes
    }
}

/// Node count with twice the panels of `nodes`, used for self-consistency checks.
pub fn refined_nodes(nodes: usize) -> usize {
    2 * (odd_nodes(nodes) - 1) + 1
}
