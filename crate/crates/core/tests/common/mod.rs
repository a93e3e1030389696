#![allow(dead_code)]

//! Brute-force references built on `BTreeSet` and hand-written group laws.

use std::collections::BTreeSet;

use folnerlab::group::{Elem, FiniteRegion, GroupModel};
use folnerlab::rng::StreamKey;

pub type Pt = [i64; 3];

pub fn mul(m: GroupModel, a: Pt, b: Pt) -> Pt {
    match m {
        GroupModel::Heisenberg => [a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1]],
        _ => [a[0] + b[0], a[1] + b[1], a[2] + b[2]],
    }
}

pub fn inv(m: GroupModel, a: Pt) -> Pt {
    match m {
        // (x, y, z)⁻¹ = (−x, −y, −z + xy)
        GroupModel::Heisenberg => [-a[0], -a[1], a[0] * a[1] - a[2]],
        _ => [-a[0], -a[1], -a[2]],
    }
}

pub fn pts(r: &FiniteRegion) -> BTreeSet<Pt> {
    r.iter().map(|e| e.coords()).collect()
}

pub fn region(m: GroupModel, s: &BTreeSet<Pt>) -> FiniteRegion {
    FiniteRegion::new(m, s.iter().map(|p| Elem::triple(p[0], p[1], p[2]))).unwrap()
}

pub fn product(m: GroupModel, a: &BTreeSet<Pt>, b: &BTreeSet<Pt>) -> BTreeSet<Pt> {
    a.iter().flat_map(|x| b.iter().map(move |y| mul(m, *x, *y))).collect()
}

/// `{g : ∃k, k' ∈ K with kg ∈ F and k'g ∉ F}`
pub fn boundary(m: GroupModel, k: &BTreeSet<Pt>, f: &BTreeSet<Pt>) -> BTreeSet<Pt> {
    let kinv: BTreeSet<Pt> = k.iter().map(|x| inv(m, *x)).collect();
    product(m, &kinv, f)
        .into_iter()
        .filter(|g| {
            let hits = k.iter().filter(|kk| f.contains(&mul(m, **kk, *g))).count();
            hits > 0 && hits < k.len()
        })
        .collect()
}

pub fn weak(m: GroupModel, k: &BTreeSet<Pt>, f: &BTreeSet<Pt>) -> f64 {
    let kf = product(m, k, f);
    f.symmetric_difference(&kf).count() as f64 / f.len() as f64
}

pub fn strong(m: GroupModel, k: &BTreeSet<Pt>, f: &BTreeSet<Pt>) -> f64 {
    boundary(m, k, f).len() as f64 / f.len() as f64
}

/// Point with coordinates in `[-r, r]`, zero beyond the model's dimension.
pub fn random_pt(m: GroupModel, key: StreamKey, counter: u64, r: i64) -> Pt {
    let mut p = [0i64; 3];
    for (i, c) in p.iter_mut().enumerate().take(m.dims()) {
        let u = key.uniform(counter * 3 + i as u64);
        *c = (u * (2 * r + 1) as f64).floor() as i64 - r;
    }
    p
}

/// Random set of `1..=max_len` points in the `[-r, r]` box, widened on
/// one-dimensional models so sparse sets stay possible.
pub fn random_set(m: GroupModel, key: StreamKey, max_len: usize, r: i64) -> BTreeSet<Pt> {
    let r = if m.dims() == 1 { r * r.max(4) } else { r };
    let room = (2 * r + 1).pow(m.dims() as u32) as usize;
    let len = (1 + (key.uniform(u64::MAX) * max_len as f64) as usize)
        .min(max_len)
        .min(room);
    let mut s = BTreeSet::new();
    let mut c = 0;
    while s.len() < len {
        s.insert(random_pt(m, key, c, r));
        c += 1;
    }
    s
}

pub fn models() -> Vec<GroupModel> {
    vec![
        GroupModel::IntLine,
        GroupModel::int_grid(2).unwrap(),
        GroupModel::int_grid(3).unwrap(),
        GroupModel::Heisenberg,
        GroupModel::lattice_r(0.01).unwrap(),
    ]
}
