//! SVD precoding of the direct links and the normalized interference model.
//!
//! Each direct channel is diagonalized as `H_qq = U_q Σ_q V_q^H`; user `q`
//! transmits along the columns of `V_q` and decodes with `U_q^H`. What the
//! other users leak into each eigen-dimension, normalized by the squared
//! singular value, is collected in the nonnegative matrix `M` so that the
//! normalized interference-plus-noise is `c = M p + n`.
//!
//! Power vectors are stacked user-major, then carrier, then transmit stream:
//! user `q` owns the contiguous block `offsets[q]..offsets[q + 1]` of length
//! `carriers * tx_antennas[q]`. Streams without a usable singular value
//! (`j >= min(nt, nr)` or rank deficient) are padded: their row of `M` is
//! zero and their normalized noise is `+inf`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::channel::{CMatrix, NetworkInstance};
use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// SVD factors of one direct link on one carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSvd {
    /// Left singular vectors, `nr x nu`.
    pub u: CMatrix,
    /// Singular values, descending, length `nu = min(nt, nr)`.
    pub sigma: Vec<f64>,
    /// Right singular vectors completed to a full `nt x nt` unitary basis.
    pub v: CMatrix,
    pub usable: Vec<bool>,
}

impl LinkSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Thin SVD of `h` with a full right basis and the phase convention that the
/// largest-magnitude entry of each left singular vector is real positive.
pub fn link_svd(h: &CMatrix) -> LinkSvd {
    let (nr, nt) = h.shape();
    let nu = nr.min(nt);
    let work = if nr < nt {
        let mut padded = CMatrix::zeros(nt, nt);
        padded.view_mut((0, 0), (nr, nt)).copy_from(h);
        padded
    } else {
        h.clone()
    };
    let svd = work.svd(true, true);
    let u_full = svd.u.expect("left vectors requested");
    let v_full = svd.v_t.expect("right vectors requested").adjoint();
    let values = svd.singular_values;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut u = CMatrix::zeros(nr, nu);
    let mut v = CMatrix::zeros(nt, nt);
    let mut sigma = Vec::with_capacity(nu);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &v_full.column(src));
        if dst < nu {
            sigma.push(values[src]);
            u.set_column(dst, &u_full.column(src).rows(0, nr));
        }
    }
    for i in 0..nu {
        let (mut best, mut best_abs) = (0, -1.0);
        for (row, z) in u.column(i).iter().enumerate() {
            if z.norm() > best_abs {
                best_abs = z.norm();
                best = row;
            }
        }
        if best_abs > 0.0 {
            let z = u[(best, i)];
            let rot = z.conj() / z.norm();
            for row in 0..nr {
                u[(row, i)] *= rot;
            }
            for row in 0..nt {
                v[(row, i)] *= rot;
            }
        }
    }
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let usable = sigma.iter().map(|&s| sigma_max > 0.0 && s > RANK_TOLERANCE * sigma_max).collect();
    LinkSvd { u, sigma, v, usable }
}

/// Inserts zero rows so that each row block matches its column block.
///
/// `row_blocks[b]` is the number of rows block `b` has in `raw` and
/// `col_blocks[b]` its number of columns; the output has `col_blocks[b]` rows
/// for that block, the extra ones zero and placed after the existing rows.
pub fn pad_to_square(raw: &DMatrix<f64>, row_blocks: &[usize], col_blocks: &[usize]) -> Result<DMatrix<f64>> {
    let rows: usize = row_blocks.iter().sum();
    let cols: usize = col_blocks.iter().sum();
    if raw.nrows() != rows || raw.ncols() != cols || row_blocks.len() != col_blocks.len() {
        return Err(Error::Shape { expected: rows * cols, got: raw.len() });
    }
    if row_blocks.iter().zip(col_blocks).any(|(r, c)| r > c) {
        return Err(Error::InvalidArgument("a row block is larger than its column block".into()));
    }
    let mut out = DMatrix::zeros(cols, cols);
    let (mut src, mut dst) = (0, 0);
    for (&nrow, &ncol) in row_blocks.iter().zip(col_blocks) {
        out.rows_mut(dst, nrow).copy_from(&raw.rows(src, nrow));
        src += nrow;
        dst += ncol;
    }
    Ok(out)
}

/// Precoded network: SVD factors, effective cross channels and the
/// interference matrix, stored per carrier (carriers never interfere).
#[derive(Debug, Clone)]
pub struct PrecodedNetwork {
    users: usize,
    carriers: usize,
    tx: Vec<usize>,
    ranks: Vec<usize>,
    offsets: Vec<usize>,
    carrier_offsets: Vec<usize>,
    links: Vec<LinkSvd>,
    heff: Vec<CMatrix>,
    blocks: Vec<DMatrix<f64>>,
    /// `global[k][local]` maps a carrier-local index to the stacked index.
    global: Vec<Vec<usize>>,
    noise_norm: Vec<f64>,
    budget: Vec<f64>,
    caps: Option<Vec<f64>>,
}

/// Computes the SVD precoders, effective channels and interference matrix.
pub fn precode(instance: &NetworkInstance) -> Result<PrecodedNetwork> {
    instance.validate()?;
    let users = instance.users();
    let carriers = instance.carriers;
    let tx = instance.topology.tx_antennas.clone();
    let ranks: Vec<usize> = (0..users)
        .map(|q| tx[q].min(instance.topology.rx_antennas[q]))
        .collect();

    let mut offsets = vec![0; users + 1];
    let mut carrier_offsets = vec![0; users + 1];
    for q in 0..users {
        offsets[q + 1] = offsets[q] + carriers * tx[q];
        carrier_offsets[q + 1] = carrier_offsets[q] + tx[q];
    }
    let side = carrier_offsets[users];
    let dim = offsets[users];

    let mut links = Vec::with_capacity(carriers * users);
    for k in 0..carriers {
        for q in 0..users {
            let svd = link_svd(instance.channel(k, q, q));
            if !svd.usable.iter().any(|&u| u) {
                return Err(Error::Degenerate { user: q, reason: format!("zero direct channel on carrier {k}") });
            }
            links.push(svd);
        }
    }

    let mut heff = Vec::with_capacity(carriers * users * users);
    for k in 0..carriers {
        for r in 0..users {
            for q in 0..users {
                let uq = &links[k * users + q].u;
                let vr = &links[k * users + r].v;
                heff.push(uq.adjoint() * instance.channel(k, r, q) * vr);
            }
        }
    }

    let global: Vec<Vec<usize>> = (0..carriers)
        .map(|k| {
            (0..users)
                .flat_map(|q| (0..tx[q]).map(move |j| (q, j)))
                .map(|(q, j)| offsets[q] + k * tx[q] + j)
                .collect()
        })
        .collect();

    let mut noise_norm = vec![f64::INFINITY; dim];
    let mut blocks = Vec::with_capacity(carriers);
    for k in 0..carriers {
        let mut m = DMatrix::zeros(side, side);
        for q in 0..users {
            let link = &links[k * users + q];
            for i in 0..ranks[q] {
                if !link.usable[i] {
                    continue;
                }
                let s2 = link.sigma[i] * link.sigma[i];
                let row = carrier_offsets[q] + i;
                noise_norm[global[k][row]] = instance.noise_power[q] / s2;
                for r in (0..users).filter(|&r| r != q) {
                    let h = &heff[(k * users + r) * users + q];
                    for j in 0..tx[r] {
                        m[(row, carrier_offsets[r] + j)] = h[(i, j)].norm_sqr() / s2;
                    }
                }
            }
        }
        blocks.push(m);
    }

    let caps = instance.caps.as_ref().map(|c| c.iter().flatten().copied().collect());

    Ok(PrecodedNetwork {
        users,
        carriers,
        tx,
        ranks,
        offsets,
        carrier_offsets,
        links,
        heff,
        blocks,
        global,
        noise_norm,
        budget: instance.budget.clone(),
        caps,
    })
}

impl PrecodedNetwork {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn carriers(&self) -> usize {
        self.carriers
    }

    /// Length of the stacked power vector.
    pub fn dim(&self) -> usize {
        self.offsets[self.users]
    }

    pub fn user_range(&self, q: usize) -> Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }

    /// Owner of a stacked index.
    pub fn user_of(&self, idx: usize) -> usize {
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    pub fn tx_antennas(&self, q: usize) -> usize {
        self.tx[q]
    }

    /// `min(nt, nr)` for user `q`.
    pub fn rank(&self, q: usize) -> usize {
        self.ranks[q]
    }

    pub fn budget(&self, q: usize) -> f64 {
        self.budget[q]
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budget
    }

    /// Per-dimension caps for user `q`, if configured.
    pub fn caps(&self, q: usize) -> Option<&[f64]> {
        self.caps.as_ref().map(|c| &c[self.user_range(q)])
    }

    pub fn link(&self, carrier: usize, q: usize) -> &LinkSvd {
        &self.links[carrier * self.users + q]
    }

    /// `U_q^H H_rq V_r` on `carrier`, restricted to the `rank(q)` decoded rows.
    pub fn effective_channel(&self, carrier: usize, r: usize, q: usize) -> &CMatrix {
        &self.heff[(carrier * self.users + r) * self.users + q]
    }

    /// Interference block of one carrier, indexed by carrier-local positions.
    pub fn carrier_block(&self, carrier: usize) -> &DMatrix<f64> {
        &self.blocks[carrier]
    }

    /// Stacked index of stream `j` of user `q` on `carrier`.
    pub fn index(&self, q: usize, carrier: usize, j: usize) -> usize {
        self.offsets[q] + carrier * self.tx[q] + j
    }

    /// Normalized noise `N_0q / sigma^2`, `+inf` on padded dimensions.
    pub fn noise_norm(&self) -> &[f64] {
        &self.noise_norm
    }

    pub fn is_usable(&self, idx: usize) -> bool {
        self.noise_norm[idx].is_finite()
    }

    fn check_len(&self, p: &[f64]) -> Result<()> {
        if p.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Shape { expected: self.dim(), got: p.len() })
        }
    }

    /// `M p` in stacked order.
    pub fn interference(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        let mut out = vec![0.0; self.dim()];
        let side = self.carrier_offsets[self.users];
        let mut local = vec![0.0; side];
        for (block, map) in self.blocks.iter().zip(&self.global) {
            for (l, &g) in map.iter().enumerate() {
                local[l] = p[g];
            }
            for (row, &g) in map.iter().enumerate() {
                let mut acc = 0.0;
                for (col, x) in local.iter().enumerate() {
                    acc += block[(row, col)] * x;
                }
                out[g] = acc;
            }
        }
        Ok(out)
    }

    /// `M^T v` in stacked order.
    pub fn interference_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = vec![0.0; self.dim()];
        for (block, map) in self.blocks.iter().zip(&self.global) {
            for (col, &g) in map.iter().enumerate() {
                let mut acc = 0.0;
                for (row, &h) in map.iter().enumerate() {
                    acc += block[(row, col)] * v[h];
                }
                out[g] = acc;
            }
        }
        Ok(out)
    }

    /// `c = M p + noise_norm`; padded entries stay `+inf`.
    pub fn normalized_interference(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.interference(p)?;
        for (ci, n) in c.iter_mut().zip(&self.noise_norm) {
            if n.is_finite() {
                *ci += n;
            } else {
                *ci = f64::INFINITY;
            }
        }
        Ok(c)
    }

    /// Dense interference matrix in stacked order.
    pub fn interference_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for (block, map) in self.blocks.iter().zip(&self.global) {
            for (row, &gr) in map.iter().enumerate() {
                for (col, &gc) in map.iter().enumerate() {
                    m[(gr, gc)] = block[(row, col)];
                }
            }
        }
        m
    }

    /// `M'`: the interference matrix with a unit diagonal.
    pub fn unit_diagonal_matrix(&self) -> DMatrix<f64> {
        let mut m = self.interference_matrix();
        m.fill_diagonal(1.0);
        m
    }

    /// Rectangular matrix with only the decoded rows, in stacked column
    /// order; padding it with [`pad_to_square`] reproduces
    /// [`interference_matrix`](Self::interference_matrix).
    pub fn raw_interference_matrix(&self) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
        let full = self.interference_matrix();
        let mut rows = Vec::new();
        let mut row_blocks = Vec::new();
        let mut col_blocks = Vec::new();
        for q in 0..self.users {
            for k in 0..self.carriers {
                for i in 0..self.ranks[q] {
                    rows.push(self.index(q, k, i));
                }
                row_blocks.push(self.ranks[q]);
                col_blocks.push(self.tx[q]);
            }
        }
        let raw = DMatrix::from_fn(rows.len(), self.dim(), |i, j| full[(rows[i], j)]);
        (raw, row_blocks, col_blocks)
    }

    /// Row sums of `M` (received normalized interference per dimension).
    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (block, map) in self.blocks.iter().zip(&self.global) {
            for (row, &g) in map.iter().enumerate() {
                out[g] = block.row(row).sum();
            }
        }
        out
    }

    /// Column sums of `M` (generated normalized interference per stream).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (block, map) in self.blocks.iter().zip(&self.global) {
            for (col, &g) in map.iter().enumerate() {
                out[g] = block.column(col).sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_flat, generate_frequency_selective, Topology};
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn check_link(h: &CMatrix) {
        let svd = link_svd(h);
        let nu = svd.rank();
        let (nr, nt) = h.shape();
        assert_eq!(nu, nr.min(nt));
        let u_err = max_abs(&(svd.u.adjoint() * &svd.u - CMatrix::identity(nu, nu)));
        let v_err = max_abs(&(svd.v.adjoint() * &svd.v - CMatrix::identity(nt, nt)));
        assert!(u_err <= 1e-10 && v_err <= 1e-10, "{u_err} {v_err}");
        let mut sig = CMatrix::zeros(nu, nu);
        for i in 0..nu {
            sig[(i, i)] = c(svd.sigma[i], 0.0);
        }
        let recon = &svd.u * sig * svd.v.columns(0, nu).adjoint();
        assert!(max_abs(&(recon - h)) <= 1e-10);
        assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..nu {
            let col = svd.u.column(i);
            let (_, z) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap();
            assert!(z.im.abs() < 1e-12 && z.re > 0.0);
        }
    }

    #[test]
    fn svd_reconstruction_all_shapes() {
        for (nt, nr) in [(1, 1), (2, 2), (4, 2), (2, 4), (3, 3), (8, 8)] {
            let topo = Topology::symmetric(2, nt, nr, 1.0, 2.0, 2.5);
            for seed in 0..5 {
                let inst = generate_flat(&topo, 1.0, seed).unwrap();
                check_link(inst.channel(0, 0, 0));
                check_link(inst.channel(0, 1, 0));
            }
        }
    }

    #[test]
    fn single_user_matrix_is_zero() {
        let topo = Topology::symmetric(1, 3, 3, 1.0, 1.0, 2.5);
        let pn = precode(&generate_flat(&topo, 1.0, 1).unwrap()).unwrap();
        assert!(pn.interference_matrix().iter().all(|&x| x == 0.0));
        let p = vec![1.0, 2.0, 3.0];
        assert_eq!(pn.normalized_interference(&p).unwrap(), pn.noise_norm().to_vec());
    }

    #[test]
    fn scalar_two_user_matrix() {
        let topo = Topology::symmetric(2, 1, 1, 1.0, 1.0, 2.5);
        let h11 = c(0.6, -0.8);
        let h22 = c(-1.5, 0.5);
        let h21 = c(0.3, 0.4); // tx 2 -> rx 1
        let h12 = c(-0.2, 0.1);
        let mk = |z| CMatrix::from_element(1, 1, z);
        let inst = NetworkInstance::from_channels(
            topo,
            vec![vec![vec![mk(h11), mk(h12)], vec![mk(h21), mk(h22)]]],
            vec![0.5, 2.0],
        )
        .unwrap();
        let pn = precode(&inst).unwrap();
        let m = pn.interference_matrix();
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 1)], 0.0);
        assert!((m[(0, 1)] - h21.norm_sqr() / h11.norm_sqr()).abs() < 1e-14);
        assert!((m[(1, 0)] - h12.norm_sqr() / h22.norm_sqr()).abs() < 1e-14);
        let cvec = pn.normalized_interference(&[1.0, 1.0]).unwrap();
        let expect = h21.norm_sqr() / h11.norm_sqr() + 0.5 / h11.norm_sqr();
        assert!((cvec[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn matrix_matches_straight_line_definition() {
        let topo = Topology::symmetric(2, 2, 2, 1.0, 1.7, 2.5);
        let inst = generate_flat(&topo, 1.0, 42).unwrap();
        let pn = precode(&inst).unwrap();
        let m = pn.interference_matrix();
        for q in 0..2 {
            let hq = inst.channel(0, q, q);
            let svd = link_svd(hq);
            for r in (0..2).filter(|&r| r != q) {
                let vr = link_svd(inst.channel(0, r, r)).v;
                for i in 0..2 {
                    for j in 0..2 {
                        // [U_q^H H_rq V_r]_{ij} = u_i^H H_rq v_j
                        let mut z = c(0.0, 0.0);
                        for a in 0..2 {
                            for b in 0..2 {
                                z += svd.u[(a, i)].conj() * inst.channel(0, r, q)[(a, b)] * vr[(b, j)];
                            }
                        }
                        let expect = z.norm_sqr() / (svd.sigma[i] * svd.sigma[i]);
                        let got = m[(pn.index(q, 0, i), pn.index(r, 0, j))];
                        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn wide_users_get_padded_rows() {
        let mut topo = Topology::symmetric(3, 2, 2, 1.0, 2.0, 2.5);
        topo.tx_antennas[1] = 4;
        let pn = precode(&generate_flat(&topo, 1.0, 7).unwrap()).unwrap();
        assert_eq!(pn.dim(), 8);
        let m = pn.interference_matrix();
        for j in 2..4 {
            let idx = pn.index(1, 0, j);
            assert!(m.row(idx).iter().all(|&x| x == 0.0));
            assert!(!pn.is_usable(idx));
        }
        let (raw, rb, cb) = pn.raw_interference_matrix();
        assert_eq!(raw.nrows(), 6);
        assert_eq!(pad_to_square(&raw, &rb, &cb).unwrap(), m);
    }

    #[test]
    fn square_users_pad_is_identity() {
        let topo = Topology::symmetric(3, 2, 3, 1.0, 2.0, 2.5);
        let pn = precode(&generate_flat(&topo, 1.0, 8).unwrap()).unwrap();
        let (raw, rb, cb) = pn.raw_interference_matrix();
        assert_eq!(raw, pn.interference_matrix());
        assert_eq!(pad_to_square(&raw, &rb, &cb).unwrap(), raw);
    }

    #[test]
    fn carriers_do_not_interfere() {
        let topo = Topology::symmetric(3, 2, 2, 1.0, 2.0, 2.5);
        let inst = generate_frequency_selective(&topo, 3, 4, 1.0, 2).unwrap();
        let pn = precode(&inst).unwrap();
        let m = pn.interference_matrix();
        for q in 0..3 {
            for r in 0..3 {
                for k in 0..4 {
                    for kk in 0..4 {
                        for i in 0..2 {
                            for j in 0..2 {
                                let v = m[(pn.index(q, k, i), pn.index(r, kk, j))];
                                if k != kk || q == r {
                                    assert_eq!(v, 0.0);
                                }
                            }
                        }
                    }
                }
            }
        }
        let p: Vec<f64> = (0..pn.dim()).map(|i| (i % 5) as f64 * 0.3).collect();
        let dense = &m * nalgebra::DVector::from_vec(p.clone());
        let fast = pn.interference(&p).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
        let fast_t = pn.interference_transpose(&p).unwrap();
        let dense_t = m.transpose() * nalgebra::DVector::from_vec(p);
        for (a, b) in dense_t.iter().zip(&fast_t) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_dimension_is_padded() {
        let topo = Topology::symmetric(2, 2, 2, 1.0, 1.0, 2.5);
        let rank_one = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        let other = CMatrix::identity(2, 2);
        let cross = CMatrix::from_element(2, 2, c(0.1, 0.0));
        let inst = NetworkInstance::from_channels(
            topo,
            vec![vec![vec![rank_one, cross.clone()], vec![cross, other]]],
            vec![1.0, 1.0],
        )
        .unwrap();
        let pn = precode(&inst).unwrap();
        assert!(pn.is_usable(0));
        assert!(!pn.is_usable(1));
        assert!(pn.interference_matrix().row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_direct_channel_is_degenerate() {
        let topo = Topology::symmetric(2, 1, 1, 1.0, 1.0, 2.5);
        let z = CMatrix::zeros(1, 1);
        let one = CMatrix::identity(1, 1);
        let inst = NetworkInstance::from_channels(
            topo,
            vec![vec![vec![z, one.clone()], vec![one.clone(), one]]],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(precode(&inst), Err(Error::Degenerate { user: 0, .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let topo = Topology::symmetric(2, 2, 2, 1.0, 2.0, 2.5);
        let pn = precode(&generate_flat(&topo, 1.0, 8).unwrap()).unwrap();
        assert!(matches!(pn.interference(&[1.0]), Err(Error::Shape { .. })));
    }
}
