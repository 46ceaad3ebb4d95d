//! Binary masks and the morphology the evaluation needs.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!("{} values for a {width}x{height} mask", data.len())));
        }
        Ok(Mask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    /// Nonzero bytes are foreground.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Mask::new(width, height, bytes.iter().map(|&b| b != 0).collect())
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &Mask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Dimension(format!(
                "{}x{} mask against {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Mask { width: self.width, height: self.height, data }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v { 255 } else { 0 }).collect()
    }
}

/// Offsets of the Euclidean disk `dx² + dy² <= r²`.
pub fn disk(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn offset(m: &Mask, x: usize, y: usize, d: (isize, isize)) -> Option<usize> {
    let (nx, ny) = (x as isize + d.0, y as isize + d.1);
    if nx < 0 || ny < 0 || nx >= m.width as isize || ny >= m.height as isize {
        return None;
    }
    Some(ny as usize * m.width + nx as usize)
}

pub fn dilate(m: &Mask, r: usize) -> Mask {
    let se = disk(r);
    let mut out = Mask::empty(m.width, m.height);
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(x, y) {
                continue;
            }
            for &d in &se {
                if let Some(i) = offset(m, x, y, d) {
                    out.data[i] = true;
                }
            }
        }
    }
    out
}

/// Pixels outside the frame do not erode, so shapes touching the border keep their extent.
pub fn erode(m: &Mask, r: usize) -> Mask {
    let se = disk(r);
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(x, y) {
                out.data[y * m.width + x] = se.iter().all(|&d| offset(m, x, y, d).map_or(true, |i| m.data[i]));
            }
        }
    }
    out
}

pub fn open(m: &Mask, r: usize) -> Mask {
    dilate(&erode(m, r), r)
}

/// Component label per pixel (0 is background) and the number of components, 8-connected.
pub fn label(m: &Mask) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; m.data.len()];
    let mut n = 0;
    let mut stack = Vec::new();
    for start in 0..m.data.len() {
        if !m.data[start] || labels[start] != 0 {
            continue;
        }
        n += 1;
        labels[start] = n as u32;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % m.width, i / m.width);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(j) = offset(m, x, y, (dx, dy)) {
                        if m.data[j] && labels[j] == 0 {
                            labels[j] = n as u32;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    (labels, n)
}

pub fn components(m: &Mask) -> usize {
    label(m).1
}

/// Zhang-Suen thinning. Parallel thinning erases some small blobs (a 2x2 square) outright;
/// a component left with no skeleton keeps its first pixel in raster order.
pub fn skeleton(m: &Mask) -> Mask {
    let (w, h) = (m.width as isize, m.height as isize);
    let mut img = m.clone();
    let at = |img: &Mask, x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && img.data[(y * w + x) as usize];
    let mut kill = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            kill.clear();
            for y in 0..h {
                for x in 0..w {
                    if !img.data[(y * w + x) as usize] {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 { !(n && e && s) && !(e && s && wst) } else { !(n && e && wst) && !(n && s && wst) };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        kill.push((y * w + x) as usize);
                    }
                }
            }
            for &i in &kill {
                img.data[i] = false;
            }
            changed |= !kill.is_empty();
        }
        if !changed {
            break;
        }
    }
    let (labels, n) = label(m);
    let mut kept = vec![false; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        if img.data[i] {
            kept[l as usize] = true;
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && !kept[l as usize] {
            img.data[i] = true;
            kept[l as usize] = true;
        }
    }
    img
}
