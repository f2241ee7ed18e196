use std::collections::VecDeque;

use super::{GridError, Line};

/// Spanning-tree structure of a radial feeder rooted at bus 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    /// `flipped[k]` is true when line `k` was given as (child, parent).
    pub flipped: Vec<bool>,
    /// Line feeding each bus; `None` for the substation.
    pub parent_line: Vec<Option<usize>>,
    /// Lines leaving each bus.
    pub children: Vec<Vec<usize>>,
    /// Buses in breadth-first order from the substation.
    pub order: Vec<usize>,
}

impl Topology {
    /// Parent bus of `bus`, if any.
    pub fn parent(&self, bus: usize, lines: &[Line]) -> Option<usize> {
        self.parent_line[bus].map(|l| {
            let line = &lines[l];
            if self.flipped[l] {
                line.to
            } else {
                line.from
            }
        })
    }

    /// Lines on the path from the substation to `bus`, root first.
    pub fn path_to(&self, bus: usize, lines: &[Line]) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = bus;
        while let Some(l) = self.parent_line[cur] {
            path.push(l);
            cur = self
                .parent(cur, lines)
                .expect("parent line implies parent bus");
        }
        path.reverse();
        path
    }
}

/// Checks that `lines` form a spanning tree over `n_buses` buses and
/// orients every line away from bus 0.
pub fn validate_radial(n_buses: usize, lines: &[Line]) -> Result<Topology, GridError> {
    if n_buses == 0 {
        return Err(GridError::Topology("no buses".into()));
    }
    if lines.len() + 1 != n_buses {
        return Err(GridError::Topology(format!(
            "a radial feeder with {n_buses} buses needs {} lines, found {}",
            n_buses - 1,
            lines.len()
        )));
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_buses];
    for (k, l) in lines.iter().enumerate() {
        if l.from >= n_buses || l.to >= n_buses {
            return Err(GridError::Topology(format!(
                "line {k} ({}-{}) references a missing bus",
                l.from, l.to
            )));
        }
        if l.from == l.to {
            return Err(GridError::Topology(format!(
                "line {k} is a self-loop at bus {}",
                l.from
            )));
        }
        adj[l.from].push((l.to, k));
        adj[l.to].push((l.from, k));
    }

    let mut flipped = vec![false; lines.len()];
    let mut parent_line = vec![None; n_buses];
    let mut children = vec![Vec::new(); n_buses];
    let mut seen = vec![false; n_buses];
    let mut used = vec![false; lines.len()];
    let mut order = Vec::with_capacity(n_buses);
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(bus) = queue.pop_front() {
        order.push(bus);
        for &(nb, k) in &adj[bus] {
            if used[k] {
                continue;
            }
            used[k] = true;
            if seen[nb] {
                return Err(GridError::Topology(format!(
                    "line {k} ({}-{}) closes a cycle",
                    lines[k].from, lines[k].to
                )));
            }
            seen[nb] = true;
            flipped[k] = lines[k].from != bus;
            parent_line[nb] = Some(k);
            children[bus].push(k);
            queue.push_back(nb);
        }
    }
    if let Some(lost) = seen.iter().position(|s| !s) {
        return Err(GridError::Topology(format!(
            "bus {lost} is not connected to the substation"
        )));
    }
    Ok(Topology {
        flipped,
        parent_line,
        children,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(a: usize, b: usize) -> Line {
        Line::new(a, b, 0.1, 0.1)
    }

    #[test]
    fn path_is_oriented_downstream() {
        let t = validate_radial(3, &[l(0, 1), l(1, 2)]).unwrap();
        assert_eq!(t.flipped, vec![false, false]);
        assert_eq!(t.parent_line, vec![None, Some(0), Some(1)]);
        assert_eq!(t.order, vec![0, 1, 2]);
    }

    #[test]
    fn star_has_three_downstream_lines() {
        let t = validate_radial(4, &[l(0, 1), l(2, 0), l(0, 3)]).unwrap();
        assert_eq!(t.children[0].len(), 3);
        assert_eq!(t.flipped, vec![false, true, false]);
    }

    #[test]
    fn triangle_is_rejected() {
        // 3 buses, 3 lines fails the count check before the search.
        let err = validate_radial(3, &[l(0, 1), l(1, 2), l(2, 0)]).unwrap_err();
        assert!(matches!(err, GridError::Topology(_)));
    }

    #[test]
    fn cycle_with_correct_line_count_is_rejected() {
        // Triangle plus an isolated bus: |lines| = |buses| - 1 but not a tree.
        let err = validate_radial(4, &[l(0, 1), l(1, 2), l(2, 0)]).unwrap_err();
        match err {
            GridError::Topology(msg) => assert!(msg.contains("cycle"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_line_is_rejected() {
        assert!(validate_radial(3, &[l(0, 1), l(0, 1)]).is_err());
        assert!(validate_radial(2, &[l(0, 1), l(0, 1)]).is_err());
    }

    #[test]
    fn path_to_leaf() {
        let lines = [l(0, 1), l(2, 1), l(2, 3)];
        let t = validate_radial(4, &lines).unwrap();
        assert_eq!(t.path_to(3, &lines), vec![0, 1, 2]);
        assert_eq!(t.parent(2, &lines), Some(1));
    }
}
