//! Connected-component labeling on a row-major grid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }

    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] =
            [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Self::Four => &FOUR,
            Self::Eight => &EIGHT,
        }
    }
}

/// One connected component: its key (the grouping value) and member
/// pixel indices in discovery order.
#[derive(Debug, Clone)]
pub struct Component<K> {
    pub key: K,
    pub pixels: Vec<usize>,
}

/// Labels components of equal, non-`None` keys. Returns a per-pixel
/// component index (`u32::MAX` for background) and the component list.
pub fn label_components<K: Copy + PartialEq>(
    height: usize,
    width: usize,
    connectivity: Connectivity,
    key: impl Fn(usize) -> Option<K>,
) -> (Vec<u32>, Vec<Component<K>>) {
    let mut labels = vec![u32::MAX; height * width];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..height * width {
        if labels[start] != u32::MAX {
            continue;
        }
        let Some(k) = key(start) else { continue };
        let id = comps.len() as u32;
        labels[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let q = nr as usize * width + nc as usize;
                if labels[q] == u32::MAX && key(q) == Some(k) {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comps.push(Component { key: k, pixels });
    }
    (labels, comps)
}
