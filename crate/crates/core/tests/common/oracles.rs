//! Nested-loop reference implementations, independent of the library's
//! pooling/difference helpers.

#![allow(dead_code)]

use hsv_retinex::Plane;

pub fn brute_pool(p: &Plane, k: usize) -> Vec<Vec<f64>> {
    let (oh, ow) = (p.height() / k, p.width() / k);
    let mut out = vec![vec![0.0; ow]; oh];
    for (oy, row) in out.iter_mut().enumerate() {
        for (ox, cell) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for dy in 0..k {
                for dx in 0..k {
                    s += p.get(ox * k + dx, oy * k + dy);
                }
            }
            *cell = s / (k * k) as f64;
        }
    }
    out
}

/// (horizontal, vertical) forward differences of a grid given as rows.
pub fn brute_diffs(g: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let h = g.len();
    let w = if h == 0 { 0 } else { g[0].len() };
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                gx.push(g[y][x + 1] - g[y][x]);
            }
            if y + 1 < h {
                gy.push(g[y + 1][x] - g[y][x]);
            }
        }
    }
    (gx, gy)
}

pub fn rows(p: &Plane) -> Vec<Vec<f64>> {
    (0..p.height())
        .map(|y| (0..p.width()).map(|x| p.get(x, y)).collect())
        .collect()
}

fn mean_sq(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }
}

pub fn brute_rc(r: &Plane, rp: &Plane) -> f64 {
    let mut d = Vec::new();
    for y in 0..r.height() {
        for x in 0..r.width() {
            d.push(r.get(x, y) - rp.get(x, y));
        }
    }
    mean_sq(&d)
}

pub fn brute_ec(r: &Plane, n: usize, e: f64) -> f64 {
    let pooled = brute_pool(r, n);
    let d: Vec<f64> = pooled.iter().flatten().map(|v| v - e).collect();
    mean_sq(&d)
}

pub fn brute_ss(r: &Plane, v: &Plane, m: usize) -> f64 {
    let (rx, ry) = brute_diffs(&brute_pool(r, m));
    let (vx, vy) = brute_diffs(&brute_pool(v, m));
    let dx: Vec<f64> = rx.iter().zip(&vx).map(|(a, b)| a - b).collect();
    let dy: Vec<f64> = ry.iter().zip(&vy).map(|(a, b)| a - b).collect();
    mean_sq(&dx) + mean_sq(&dy)
}

pub fn brute_tv(l: &Plane) -> f64 {
    let (gx, gy) = brute_diffs(&rows(l));
    mean_sq(&gx) + mean_sq(&gy)
}

pub fn brute_is(l: &Plane, lp: &Plane) -> f64 {
    brute_tv(l) + brute_tv(lp)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Central-difference gradient of `f` with respect to every sample of `p`.
pub fn fd_plane(p: &Plane, h: f64, f: impl Fn(&Plane) -> f64) -> Plane {
    let mut out = Plane::zeros(p.width(), p.height());
    let mut q = p.clone();
    for y in 0..p.height() {
        for x in 0..p.width() {
            let orig = p.get(x, y);
            q.set(x, y, orig + h);
            let plus = f(&q);
            q.set(x, y, orig - h);
            let minus = f(&q);
            q.set(x, y, orig);
            out.set(x, y, (plus - minus) / (2.0 * h));
        }
    }
    out
}
