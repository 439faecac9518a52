//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher lower
//! envelope of parabolas, one pass per axis).

use rayon::prelude::*;

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `seed` is true. `f64::INFINITY` everywhere when there is no seed.
pub fn squared_edt(width: usize, height: usize, seed: &[bool]) -> Vec<f64> {
    assert_eq!(seed.len(), width * height);
    let mut d: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    // columns: transpose, transform rows, transpose back
    let mut t = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            t[x * height + y] = d[y * width + x];
        }
    }
    t.par_chunks_mut(height).for_each(transform_line);
    for y in 0..height {
        for x in 0..width {
            d[y * width + x] = t[x * height + y];
        }
    }
    d.par_chunks_mut(width).for_each(transform_line);
    d
}

/// In-place 1-D transform `f(p) <- min_q (p - q)^2 + f(q)`.
fn transform_line(f: &mut [f64]) {
    let n = f.len();
    let src = f.to_vec();
    // parabola vertices and the boundaries between their envelope regions
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if src[q].is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((src[q] + (q * q) as f64) - (src[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (p, out) in f.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let dq = p as f64 - v[k] as f64;
        *out = dq * dq + src[v[k]];
    }
}
