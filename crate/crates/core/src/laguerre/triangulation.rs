//! Incremental regular (weighted Delaunay) triangulation.
//!
//! Each site is lifted to `(x, y, ‖x‖² − ψ)`; the regular triangulation is
//! the projection of the lower convex hull of the lifted points. Insertion
//! carves the set of triangles whose lifted plane passes above the new point
//! (always connected and star-shaped from it) and re-fans the cavity. A point
//! that conflicts with no triangle is hidden: its power cell is empty.
//!
//! Three far-away auxiliary vertices enclose the domain. Their weights are
//! chosen so that their power cells never reach the domain window.

use super::predicates::{in_power_circle, orient, Lifted};
use crate::geom::Point;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [u32; 3],
    /// `n[k]` is the triangle across the edge opposite `v[k]`.
    n: [u32; 3],
    alive: bool,
}

pub(crate) struct RegularTriangulation {
    pts: Vec<Lifted>,
    n_sites: usize,
    tris: Vec<Tri>,
    free: Vec<u32>,
    rng: u64,
}

impl RegularTriangulation {
    /// Triangulates `sites` with weights `psi`. `center` and `radius`
    /// describe a disk containing the domain window.
    pub fn build(sites: &[Point], psi: &[f64], center: Point, radius: f64) -> Self {
        let n = sites.len();
        let psi_max = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut pts: Vec<Lifted> = sites
            .iter()
            .zip(psi)
            .map(|(&p, &w)| Lifted { p, z: p.norm2() - w })
            .collect();
        let r = 100.0 * radius.max(1e-3);
        for k in 0..3 {
            let th = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            let p = Point::new(center.x + r * th.cos(), center.y + r * th.sin());
            pts.push(Lifted { p, z: p.norm2() - psi_max });
        }
        let mut t = Self {
            pts,
            n_sites: n,
            tris: Vec::with_capacity(2 * n + 8),
            free: Vec::new(),
            rng: 0x9E37_79B9_7F4A_7C15,
        };
        t.tris.push(Tri {
            v: [n as u32, n as u32 + 1, n as u32 + 2],
            n: [NONE; 3],
            alive: true,
        });
        let mut order: Vec<usize> = (0..n).collect();
        let keys: Vec<u64> = sites.iter().map(|p| hilbert_key(*p, center, radius)).collect();
        order.sort_unstable_by_key(|&i| keys[i]);
        let mut hint = 0u32;
        for i in order {
            if let Some(h) = t.insert(i, hint) {
                hint = h;
            }
        }
        t
    }

    fn next_rand(&mut self) -> u64 {
        self.rng ^= self.rng << 13;
        self.rng ^= self.rng >> 7;
        self.rng ^= self.rng << 17;
        self.rng
    }

    #[inline]
    fn lp(&self, v: u32) -> (usize, &Lifted) {
        (v as usize, &self.pts[v as usize])
    }

    fn conflicts(&self, t: u32, p: u32) -> bool {
        let v = self.tris[t as usize].v;
        in_power_circle(self.lp(v[0]), self.lp(v[1]), self.lp(v[2]), self.lp(p))
    }

    /// Stochastic visibility walk to a triangle containing `p` (closed).
    fn locate(&mut self, p: Point, start: u32) -> u32 {
        let mut t = start;
        let mut prev = NONE;
        loop {
            let tri = self.tris[t as usize];
            let off = (self.next_rand() % 3) as usize;
            let mut moved = false;
            for s in 0..3 {
                let k = (off + s) % 3;
                let nb = tri.n[k];
                if nb == NONE || nb == prev {
                    continue;
                }
                let a = self.pts[tri.v[(k + 1) % 3] as usize].p;
                let b = self.pts[tri.v[(k + 2) % 3] as usize].p;
                if orient(a, b, p) < 0.0 {
                    prev = t;
                    t = nb;
                    moved = true;
                    break;
                }
            }
            if !moved {
                // the edge towards `prev` was skipped; check it before stopping
                if prev != NONE {
                    let k = (0..3).find(|&k| tri.n[k] == prev).unwrap();
                    let a = self.pts[tri.v[(k + 1) % 3] as usize].p;
                    let b = self.pts[tri.v[(k + 2) % 3] as usize].p;
                    if orient(a, b, p) < 0.0 {
                        let back = prev;
                        prev = t;
                        t = back;
                        continue;
                    }
                }
                return t;
            }
        }
    }

    fn alloc(&mut self, tri: Tri) -> u32 {
        if let Some(i) = self.free.pop() {
            self.tris[i as usize] = tri;
            i
        } else {
            self.tris.push(tri);
            (self.tris.len() - 1) as u32
        }
    }

    /// Inserts site `i`; returns a live triangle near it, or `None` if the
    /// site is hidden.
    fn insert(&mut self, i: usize, hint: u32) -> Option<u32> {
        let p = self.pts[i].p;
        let pi = i as u32;
        let start = self.locate(p, hint);
        if !self.conflicts(start, pi) {
            return None;
        }
        let mut cavity = vec![start];
        let mut in_cavity = std::collections::HashSet::new();
        in_cavity.insert(start);
        // horizon edges (a, b, outer triangle)
        let mut horizon: Vec<(u32, u32, u32)> = Vec::new();
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            let tri = self.tris[t as usize];
            for e in 0..3 {
                let nb = tri.n[e];
                if nb != NONE && in_cavity.contains(&nb) {
                    continue;
                }
                if nb != NONE && self.conflicts(nb, pi) {
                    in_cavity.insert(nb);
                    cavity.push(nb);
                } else {
                    horizon.push((tri.v[(e + 1) % 3], tri.v[(e + 2) % 3], nb));
                }
            }
        }
        // a neighbour can be queued after being classified as horizon by an
        // earlier triangle; drop such edges
        horizon.retain(|&(_, _, nb)| nb == NONE || !in_cavity.contains(&nb));
        for &t in &cavity {
            self.tris[t as usize].alive = false;
            self.free.push(t);
        }
        let mut created: Vec<(u32, u32, u32)> = Vec::with_capacity(horizon.len());
        for &(a, b, nb) in &horizon {
            let t = self.alloc(Tri {
                v: [a, b, pi],
                n: [NONE, NONE, nb],
                alive: true,
            });
            if nb != NONE {
                let ntri = &mut self.tris[nb as usize];
                for e in 0..3 {
                    let (x, y) = (ntri.v[(e + 1) % 3], ntri.v[(e + 2) % 3]);
                    if x == b && y == a {
                        ntri.n[e] = t;
                    }
                }
            }
            created.push((a, b, t));
        }
        for idx in 0..created.len() {
            let (a, b, t) = created[idx];
            // edge (b, p) is opposite a: shared with the triangle starting at b
            let after = created.iter().find(|c| c.0 == b).map(|c| c.2).unwrap_or(NONE);
            // edge (p, a) is opposite b: shared with the triangle ending at a
            let before = created.iter().find(|c| c.1 == a).map(|c| c.2).unwrap_or(NONE);
            let tri = &mut self.tris[t as usize];
            tri.n[0] = after;
            tri.n[1] = before;
        }
        created.last().map(|c| c.2)
    }

    /// Neighbour lists of the real sites (auxiliary vertices excluded).
    /// Hidden sites get an empty list and `present[i] = false`.
    pub fn adjacency(&self) -> (Vec<Vec<u32>>, Vec<bool>) {
        let n = self.n_sites;
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut present = vec![false; n];
        for tri in self.tris.iter().filter(|t| t.alive) {
            for k in 0..3 {
                let a = tri.v[k] as usize;
                if a < n {
                    present[a] = true;
                }
                // each undirected edge is seen from both sides, record it once
                // from each endpoint's outgoing direction
                let b = tri.v[(k + 1) % 3] as usize;
                if a < n && b < n {
                    adj[a].push(b as u32);
                    adj[b].push(a as u32);
                }
            }
        }
        for l in adj.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        (adj, present)
    }

    #[cfg(test)]
    pub fn live_triangles(&self) -> Vec<[usize; 3]> {
        self.tris
            .iter()
            .filter(|t| t.alive)
            .map(|t| [t.v[0] as usize, t.v[1] as usize, t.v[2] as usize])
            .collect()
    }

    #[cfg(test)]
    pub fn check_regular(&self) -> bool {
        for (ti, t) in self.tris.iter().enumerate().filter(|(_, t)| t.alive) {
            let a = self.pts[t.v[0] as usize].p;
            let b = self.pts[t.v[1] as usize].p;
            let c = self.pts[t.v[2] as usize].p;
            if orient(a, b, c) <= 0.0 {
                return false;
            }
            for k in 0..3 {
                let nb = t.n[k];
                if nb == NONE {
                    continue;
                }
                let nt = &self.tris[nb as usize];
                if !nt.alive || !nt.n.contains(&(ti as u32)) {
                    return false;
                }
                let opp = nt.v.iter().find(|v| !t.v.contains(v)).copied().unwrap();
                if self.conflicts(ti as u32, opp) {
                    return false;
                }
            }
        }
        true
    }
}

/// Position along a Hilbert curve of order 16 over the bounding box.
pub(crate) fn hilbert_key(p: Point, center: Point, radius: f64) -> u64 {
    const ORDER: u32 = 16;
    let side = (1u64 << ORDER) as f64;
    let scale = |v: f64, c: f64| {
        let t = ((v - c) / (2.0 * radius) + 0.5).clamp(0.0, 1.0 - 1e-12);
        (t * side) as u64
    };
    let (mut x, mut y) = (scale(p.x, center.x), scale(p.y, center.y));
    let mut d = 0u64;
    let mut s = 1u64 << (ORDER - 1);
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = (1u64 << ORDER) - 1 - x;
                y = (1u64 << ORDER) - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s >>= 1;
    }
    d
}
