use wm_core::synthworld::{CompleteWorld, WorldMeta, WorldSpec};

/// Hand-built world: every cell road (`road = true`) or every cell not-road.
pub fn flat_world(n: usize, cell_m: f64, road: bool) -> CompleteWorld {
    let spec = WorldSpec {
        extent_m: n as f64 * cell_m,
        cell_m,
        ..WorldSpec::default()
    };
    let e = spec.extent_m;
    CompleteWorld {
        size: n,
        cell_m,
        semantic: vec![u8::from(road); n * n],
        intensity: vec![if road { 0.5 } else { 0.0 }; n * n],
        obstacle_height: vec![0.0; n * n],
        meta: WorldMeta {
            spec,
            main_width: e,
            branch: None,
            route: vec![[0.0, e / 2.0], [e, e / 2.0]],
        },
    }
}

/// Number of 4-connected components among cells where `mask` is true.
pub fn components(n: usize, mask: &[bool]) -> usize {
    let mut seen = vec![false; n * n];
    let mut count = 0;
    for start in 0..n * n {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = (k / n, k % n);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(k - n);
            }
            if i + 1 < n {
                nb.push(k + n);
            }
            if j > 0 {
                nb.push(k - 1);
            }
            if j + 1 < n {
                nb.push(k + 1);
            }
            for m in nb {
                if mask[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
    }
    count
}
