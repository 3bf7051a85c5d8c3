//! 2D binary morphology and connected-component labelling on single slices.
//!
//! Structuring elements are squares of Chebyshev radius `r`, i.e. `(2r+1)²`.
//! Erosion treats pixels outside the plane as background.

use std::collections::VecDeque;

/// A binary plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), rows * cols, "plane data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.cols + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// `self ∖ other`
    pub fn minus(&self, other: &Plane) -> Plane {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & !b & 1).collect();
        Plane::new(self.rows, self.cols, data)
    }

    pub fn is_subset_of(&self, other: &Plane) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

fn filter_rows(src: &[u8], rows: usize, cols: usize, radius: usize, dilate: bool) -> Vec<u8> {
    let mut out = vec![0u8; src.len()];
    for r in 0..rows {
        let line = &src[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(cols - 1);
            let window = &line[lo..=hi];
            out[r * cols + c] = if dilate {
                window.iter().any(|&v| v != 0) as u8
            } else {
                // window clipped at the border counts as containing background
                (c >= radius && c + radius < cols && window.iter().all(|&v| v != 0)) as u8
            };
        }
    }
    out
}

fn filter_cols(src: &[u8], rows: usize, cols: usize, radius: usize, dilate: bool) -> Vec<u8> {
    let mut out = vec![0u8; src.len()];
    for c in 0..cols {
        for r in 0..rows {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(rows - 1);
            let mut any = false;
            let mut all = true;
            for rr in lo..=hi {
                let v = src[rr * cols + c] != 0;
                any |= v;
                all &= v;
            }
            out[r * cols + c] = if dilate {
                any as u8
            } else {
                (r >= radius && r + radius < rows && all) as u8
            };
        }
    }
    out
}

fn square_filter(plane: &Plane, radius: usize, iterations: usize, dilate: bool) -> Plane {
    let mut data = plane.data.clone();
    for _ in 0..iterations {
        let tmp = filter_rows(&data, plane.rows, plane.cols, radius, dilate);
        data = filter_cols(&tmp, plane.rows, plane.cols, radius, dilate);
    }
    Plane::new(plane.rows, plane.cols, data)
}

/// Dilation by a `(2r+1)²` square, applied `iterations` times.
pub fn dilate(plane: &Plane, radius: usize, iterations: usize) -> Plane {
    square_filter(plane, radius, iterations, true)
}

/// Erosion by a `(2r+1)²` square, applied `iterations` times.
pub fn erode(plane: &Plane, radius: usize, iterations: usize) -> Plane {
    square_filter(plane, radius, iterations, false)
}

/// Dilation minus erosion.
pub fn band(plane: &Plane, radius: usize, iterations: usize) -> Plane {
    dilate(plane, radius, iterations).minus(&erode(plane, radius, iterations))
}

/// One 8-connected component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: u32,
    pub area: usize,
    pub row0: usize,
    pub col0: usize,
    /// exclusive
    pub row1: usize,
    /// exclusive
    pub col1: usize,
}

/// Labels 8-connected foreground components. Labels start at 1 in raster
/// order of each component's first pixel; background is 0.
pub fn label_components(plane: &Plane) -> (Vec<u32>, Vec<Component>) {
    let (rows, cols) = (plane.rows, plane.cols);
    let mut labels = vec![0u32; rows * cols];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..rows * cols {
        if plane.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        let (r0, c0) = (start / cols, start % cols);
        let mut comp = Component {
            label,
            area: 0,
            row0: r0,
            col0: c0,
            row1: r0 + 1,
            col1: c0 + 1,
        };
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            comp.area += 1;
            comp.row0 = comp.row0.min(r);
            comp.col0 = comp.col0.min(c);
            comp.row1 = comp.row1.max(r + 1);
            comp.col1 = comp.col1.max(c + 1);
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let j = nr * cols + nc;
                    if plane.data[j] != 0 && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        components.push(comp);
    }
    (labels, components)
}

/// Removes 8-connected components for which `keep(component)` is false.
pub fn filter_components(plane: &Plane, keep: impl Fn(&Component) -> bool) -> Plane {
    let (labels, components) = label_components(plane);
    let kept: Vec<bool> = components.iter().map(&keep).collect();
    let data = labels
        .iter()
        .map(|&l| (l != 0 && kept[l as usize - 1]) as u8)
        .collect();
    Plane::new(plane.rows, plane.cols, data)
}
