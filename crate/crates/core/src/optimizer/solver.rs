//! Primal-dual interior-point solver (Mehrotra predictor-corrector) for the
//! per-slot program.
//!
//! The Newton system is `H + G' D G` over the free slot energies plus at
//! most one scalar (the peak increase, or the phase-I shift). Per EV the
//! matrix is diagonal plus one rank-one term per window; slots couple EVs
//! through the transformer and peak rows. It is solved with Woodbury over
//! the slots, so the only dense factorisation is at most 96 x 96.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::kkt::kkt_residual;
use super::plan::{Multipliers, SchedulePlan, SolveOutcome, SolverStats};
use super::problem::{
    fixed_value, free_mask, implied_e_inc, objective, requirement, terms, StepProblem, MIN_SLACK,
    PIN_TOL,
};
use crate::error::{Error, Result};
use crate::units::SLOTS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

const STEP_FRACTION: f64 = 0.995;

/// Merit, x, y, duals and iteration number of a saved iterate.
type Iterate = (f64, Vec<f64>, f64, Vec<f64>, usize);
/// Proximal term on the slot energies. Shifting energy between equally
/// priced slots is free, so without it the Newton matrix is singular along
/// those directions once the box duals vanish.
const PRIMAL_REG: f64 = 1e-5;
/// Near the solution the preconditioner can lag the exact system by a few
/// digits; 25 iterations was not always enough.
const CG_MAX_ITER: usize = 100;
/// Phase I stops as soon as the requirements hold with this margin.
const PHASE1_MARGIN: f64 = 1e-4;
/// Requirements unmet by more than this after phase I mean infeasible.
const PHASE1_INFEASIBLE: f64 = 1e-7;

struct STerm {
    lo: usize,
    hi: usize,
    coef: f64,
    /// 1 + carried + fixed energy inside the window.
    c: f64,
    md: Option<usize>,
}

struct Block {
    off: usize,
    len: usize,
    /// Absolute slot of each local variable, ascending.
    slots: Vec<usize>,
    terms: Vec<STerm>,
}

struct Md {
    block: usize,
    lo: usize,
    hi: usize,
    b: f64,
}

struct Layout {
    nx: usize,
    ub: f64,
    blocks: Vec<Block>,
    md: Vec<Md>,
    /// Slot position of each variable.
    pos: Vec<usize>,
    slot_abs: Vec<usize>,
    b_tr: Vec<f64>,
    b_pk: Vec<f64>,
    cost: Vec<f64>,
}

impl Layout {
    fn nslots(&self) -> usize {
        self.slot_abs.len()
    }
}

#[derive(Clone, Copy)]
struct Mode {
    logs: bool,
    costs: bool,
    has_y: bool,
    y_cost: f64,
    /// Coefficient of y in the min-delivery rows `-sum x + a y <= -b`.
    md_y: f64,
    peak: bool,
    y_lo: f64,
}

/// Offsets of the row groups inside the flat slack and dual vectors.
#[derive(Clone, Copy)]
struct Rows {
    up: usize,
    md: usize,
    tr: usize,
    pk: usize,
    ylo: usize,
    m: usize,
}

impl Rows {
    fn new(lay: &Layout, mode: &Mode) -> Self {
        let up = lay.nx;
        let md = 2 * lay.nx;
        let tr = md + lay.md.len();
        let pk = tr + lay.nslots();
        let ylo = pk + if mode.peak { lay.nslots() } else { 0 };
        let m = ylo + usize::from(mode.has_y);
        Self { up, md, tr, pk, ylo, m }
    }
}

struct Ipm<'a> {
    lay: &'a Layout,
    mode: Mode,
    rows: Rows,
    x: Vec<f64>,
    y: f64,
    lam: Vec<f64>,
}

/// Factorised Newton matrix.
struct Factor {
    binv: Vec<DMatrix<f64>>,
    kslot: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    kxy: Vec<f64>,
    kyy: f64,
    /// `Kxx^{-1} kxy`, cached for the scalar elimination in phase I.
    kinv_kxy: Vec<f64>,
    /// With peak rows the scalar is eliminated at the slot level instead:
    /// `a = -d_pk / m`, `kslot^{-1} a` and `c + a' kslot^{-1} a`.
    slot_a: Vec<f64>,
    kinv_a: DVector<f64>,
    slot_den: f64,
    // the unfactored pieces, for residuals in iterative refinement
    diag: Vec<f64>,
    cols: Vec<Vec<(usize, usize, f64)>>,
    mslot: Vec<f64>,
}

fn step_to_boundary(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(1.0, f64::min)
}

impl<'a> Ipm<'a> {
    fn slacks(&self) -> Vec<f64> {
        let lay = self.lay;
        let r = self.rows;
        let mut s = vec![0.0; r.m];
        let mut load = vec![0.0; lay.nslots()];
        for (v, &x) in self.x.iter().enumerate() {
            s[v] = x;
            s[r.up + v] = lay.ub - x;
            load[lay.pos[v]] += x;
        }
        for (i, md) in lay.md.iter().enumerate() {
            let off = lay.blocks[md.block].off;
            let sum: f64 = self.x[off + md.lo..off + md.hi].iter().sum();
            s[r.md + i] = sum - self.mode.md_y * self.y - md.b;
        }
        for p in 0..lay.nslots() {
            s[r.tr + p] = lay.b_tr[p] - load[p];
            if self.mode.peak {
                s[r.pk + p] = lay.b_pk[p] - load[p] + self.y;
            }
        }
        if self.mode.has_y {
            s[r.ylo] = self.y - self.mode.y_lo;
        }
        s
    }

    /// Log arguments of every term, block by block.
    fn log_args(&self) -> Vec<Vec<f64>> {
        self.lay
            .blocks
            .iter()
            .map(|b| {
                b.terms
                    .iter()
                    .map(|t| t.c + self.x[b.off + t.lo..b.off + t.hi].iter().sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Gradient of the minimised objective.
    fn grad(&self, args: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let lay = self.lay;
        let mut gx = if self.mode.costs {
            lay.cost.clone()
        } else {
            vec![0.0; lay.nx]
        };
        if self.mode.logs {
            for (b, a) in lay.blocks.iter().zip(args) {
                for (t, &arg) in b.terms.iter().zip(a) {
                    let g = t.coef / arg;
                    for v in &mut gx[b.off + t.lo..b.off + t.hi] {
                        *v -= g;
                    }
                }
            }
        }
        (gx, if self.mode.has_y { self.mode.y_cost } else { 0.0 })
    }

    /// `G' w` split into its x and y parts.
    fn gt_mul(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let lay = self.lay;
        let r = self.rows;
        let mut vx = vec![0.0; lay.nx];
        let mut vy = 0.0;
        for v in 0..lay.nx {
            vx[v] = -w[v] + w[r.up + v];
            let p = lay.pos[v];
            vx[v] += w[r.tr + p];
            if self.mode.peak {
                vx[v] += w[r.pk + p];
            }
        }
        for (i, md) in lay.md.iter().enumerate() {
            let off = lay.blocks[md.block].off;
            for v in &mut vx[off + md.lo..off + md.hi] {
                *v -= w[r.md + i];
            }
            vy += self.mode.md_y * w[r.md + i];
        }
        if self.mode.peak {
            vy -= w[r.pk..r.pk + lay.nslots()].iter().sum::<f64>();
        }
        if self.mode.has_y {
            vy -= w[r.ylo];
        }
        (vx, vy)
    }

    /// Slack change `-G dz` for a primal direction.
    fn ds(&self, dx: &[f64], dy: f64) -> Vec<f64> {
        let lay = self.lay;
        let r = self.rows;
        let mut ds = vec![0.0; r.m];
        let mut dload = vec![0.0; lay.nslots()];
        for (v, &d) in dx.iter().enumerate() {
            ds[v] = d;
            ds[r.up + v] = -d;
            dload[lay.pos[v]] += d;
        }
        for (i, md) in lay.md.iter().enumerate() {
            let off = lay.blocks[md.block].off;
            ds[r.md + i] = dx[off + md.lo..off + md.hi].iter().sum::<f64>() - self.mode.md_y * dy;
        }
        for p in 0..lay.nslots() {
            ds[r.tr + p] = -dload[p];
            if self.mode.peak {
                ds[r.pk + p] = -dload[p] + dy;
            }
        }
        if self.mode.has_y {
            ds[r.ylo] = dy;
        }
        ds
    }

    fn factor(&self, d: &[f64], args: &[Vec<f64>]) -> Result<Factor> {
        let lay = self.lay;
        let r = self.rows;
        let ns = lay.nslots();
        let mut kslot = DMatrix::<f64>::zeros(ns, ns);
        let mslot: Vec<f64> = (0..ns)
            .map(|p| d[r.tr + p] + if self.mode.peak { d[r.pk + p] } else { 0.0 })
            .collect();
        for p in 0..ns {
            kslot[(p, p)] = 1.0 / mslot[p];
        }
        let diag: Vec<f64> = (0..lay.nx).map(|v| d[v] + d[r.up + v] + PRIMAL_REG).collect();
        let mut all_cols = Vec::with_capacity(lay.blocks.len());
        let mut binv = Vec::with_capacity(lay.blocks.len());
        for (bi, b) in lay.blocks.iter().enumerate() {
            let dinv: Vec<f64> = (0..b.len).map(|j| 1.0 / diag[b.off + j]).collect();
            // window weights of the rank-one terms
            let cols: Vec<(usize, usize, f64)> = b
                .terms
                .iter()
                .zip(&args[bi])
                .filter_map(|(t, &a)| {
                    let mut w = if self.mode.logs { t.coef / (a * a) } else { 0.0 };
                    if let Some(i) = t.md {
                        w += d[r.md + i];
                    }
                    (w > 0.0).then_some((t.lo, t.hi, w))
                })
                .collect();
            let mut bk = DMatrix::<f64>::from_diagonal(&DVector::from_vec(dinv.clone()));
            if !cols.is_empty() {
                let m = cols.len();
                let mut g = DMatrix::<f64>::zeros(m, m);
                for i in 0..m {
                    g[(i, i)] += 1.0 / cols[i].2;
                    for j in 0..m {
                        let lo = cols[i].0.max(cols[j].0);
                        let hi = cols[i].1.min(cols[j].1);
                        if lo < hi {
                            g[(i, j)] += dinv[lo..hi].iter().sum::<f64>();
                        }
                    }
                }
                let z = DMatrix::<f64>::from_fn(b.len, m, |v, i| {
                    if (cols[i].0..cols[i].1).contains(&v) {
                        dinv[v]
                    } else {
                        0.0
                    }
                });
                let chol = g
                    .cholesky()
                    .ok_or_else(|| Error::Solver("window system not positive definite".into()))?;
                let ginv_zt = chol.solve(&z.transpose());
                bk -= &z * ginv_zt;
            }
            for i in 0..b.len {
                let pi = lay.pos[b.off + i];
                for j in 0..b.len {
                    kslot[(pi, lay.pos[b.off + j])] += bk[(i, j)];
                }
            }
            binv.push(bk);
            all_cols.push(cols);
        }
        let kslot = cholesky_regularised(kslot)?;

        let mut kxy = vec![0.0; lay.nx];
        let mut kyy = 0.0;
        if self.mode.has_y {
            for (i, md) in lay.md.iter().enumerate() {
                let off = lay.blocks[md.block].off;
                let dm = d[r.md + i];
                for v in &mut kxy[off + md.lo..off + md.hi] {
                    *v -= self.mode.md_y * dm;
                }
                kyy += self.mode.md_y * self.mode.md_y * dm;
            }
            if self.mode.peak {
                for v in 0..lay.nx {
                    kxy[v] -= d[r.pk + lay.pos[v]];
                }
                kyy += d[r.pk..r.pk + ns].iter().sum::<f64>();
            }
            kyy += d[r.ylo];
        }
        let mut f = Factor {
            binv,
            kslot,
            kxy,
            kyy,
            kinv_kxy: Vec::new(),
            slot_a: Vec::new(),
            kinv_a: DVector::zeros(0),
            slot_den: 0.0,
            diag,
            cols: all_cols,
            mslot,
        };
        if self.mode.peak {
            // kyy - k' m^{-1} k, summed slot by slot to avoid cancellation
            let mut c = d[r.ylo];
            for p in 0..ns {
                c += d[r.pk + p] * d[r.tr + p] / f.mslot[p];
            }
            f.slot_a = (0..ns).map(|p| -d[r.pk + p] / f.mslot[p]).collect();
            f.kinv_a = f.kslot.solve(&DVector::from_column_slice(&f.slot_a));
            f.slot_den = c + dot(&f.slot_a, f.kinv_a.as_slice());
        } else if self.mode.has_y {
            f.kinv_kxy = f.solve_xx(lay, &f.kxy);
        }
        Ok(f)
    }

    /// Newton direction: conjugate gradients on the exact matrix,
    /// preconditioned by the regularised factorisation. The proximal term
    /// alone would slow convergence along nearly flat directions, and close
    /// to the solution the factorisation is too inaccurate to use by itself.
    fn newton(&self, f: &Factor, rx: &[f64], ry: f64) -> (Vec<f64>, f64) {
        let has_y = self.mode.has_y;
        let pack = |x: Vec<f64>, y: f64| {
            let mut v = x;
            if has_y {
                v.push(y);
            }
            v
        };
        let nx = self.lay.nx;
        let apply_k = |v: &[f64]| {
            let (kx, ky) = f.matvec(self.lay, &v[..nx], if has_y { v[nx] } else { 0.0 }, has_y);
            pack(kx, ky)
        };
        let precond = |v: &[f64]| {
            let (x, y) = self.newton_once(f, &v[..nx], if has_y { v[nx] } else { 0.0 });
            pack(x, y)
        };
        let b = pack(rx.to_vec(), ry);
        let bnorm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut z = precond(&b);
        let mut res: Vec<f64> = b.iter().zip(apply_k(&z)).map(|(b, k)| b - k).collect();
        let mut best = (res.iter().fold(0.0f64, |a, v| a.max(v.abs())), z.clone());
        let mut pz = precond(&res);
        let mut dir = pz.clone();
        let mut rho = dot(&res, &pz);
        for _ in 0..CG_MAX_ITER {
            if best.0 <= 1e-15 * bnorm || !(rho > 0.0) {
                break;
            }
            let kd = apply_k(&dir);
            let curv = dot(&dir, &kd);
            if !(curv > 0.0) {
                break;
            }
            let step = rho / curv;
            for ((zi, di), (ri, ki)) in z.iter_mut().zip(&dir).zip(res.iter_mut().zip(&kd)) {
                *zi += step * di;
                *ri -= step * ki;
            }
            let err = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !err.is_finite() {
                break;
            }
            if err < best.0 {
                best = (err, z.clone());
            }
            pz = precond(&res);
            let rho_next = dot(&res, &pz);
            let beta = rho_next / rho;
            rho = rho_next;
            for (d, p) in dir.iter_mut().zip(&pz) {
                *d = p + beta * *d;
            }
        }
        log::trace!("newton residual {:.3e}, rhs {:.3e}", best.0, bnorm);
        let mut z = best.1;
        let dy = if has_y { z.pop().unwrap_or(0.0) } else { 0.0 };
        (z, dy)
    }

    fn newton_once(&self, f: &Factor, rx: &[f64], ry: f64) -> (Vec<f64>, f64) {
        if self.mode.peak {
            return f.solve_peak(self.lay, rx, ry);
        }
        let a = f.solve_xx(self.lay, rx);
        if !self.mode.has_y {
            return (a, 0.0);
        }
        let num = ry - dot(&f.kxy, &a);
        let den = f.kyy - dot(&f.kxy, &f.kinv_kxy);
        let dy = num / den;
        let dx = a.iter().zip(&f.kinv_kxy).map(|(ai, bi)| ai - bi * dy).collect();
        (dx, dy)
    }

    /// Runs until the residuals drop below `tol / 10`; returns the iteration
    /// count. `stop` is checked before every iteration and ends the loop
    /// early. Near the solution the Newton matrix gets too ill-conditioned to
    /// gain digits, so once the best iterate is within `tol` a few
    /// iterations without progress (or a failed factorisation) end the run
    /// at that iterate.
    fn run(&mut self, tol: f64, max_iter: usize, stop: impl Fn(&Self) -> bool) -> Result<usize> {
        let m = self.rows.m;
        let mut best: Option<Iterate> = None;
        let mut stalled = 0;
        for iter in 0..=max_iter {
            let s = self.slacks();
            let args = self.log_args();
            let (gx, gy) = self.grad(&args);
            let rd = self.dual_residual(&gx, gy);
            let comp: Vec<f64> = s.iter().zip(&self.lam).map(|(a, b)| a * b).collect();
            let comp_max = comp.iter().copied().fold(0.0, f64::max);
            let merit = rd.max(comp_max);
            log::trace!("iter {iter}: rd {rd:.3e} comp {comp_max:.3e} y {:.6}", self.y);
            if merit <= 0.1 * tol || stop(self) {
                return Ok(iter);
            }
            if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, self.x.clone(), self.y, self.lam.clone(), iter));
                stalled = 0;
            } else {
                stalled += 1;
            }
            let acceptable = best.as_ref().is_some_and(|b| b.0 <= tol);
            if acceptable && (stalled >= 3 || !merit.is_finite()) {
                return Ok(self.restore(best));
            }
            if iter == max_iter {
                break;
            }
            if m == 0 {
                return Ok(iter);
            }
            let mu = comp.iter().sum::<f64>() / m as f64;
            let d: Vec<f64> = self.lam.iter().zip(&s).map(|(l, s)| l / s).collect();
            let fac = match self.factor(&d, &args) {
                Ok(f) => f,
                Err(_) if acceptable => return Ok(self.restore(best)),
                Err(e) => return Err(e),
            };

            // predictor
            let (dx_a, dy_a) = self.newton(&fac, &neg(&gx), -gy);
            let ds_a = self.ds(&dx_a, dy_a);
            let dl_a: Vec<f64> = (0..m)
                .map(|i| -self.lam[i] - self.lam[i] * ds_a[i] / s[i])
                .collect();
            let alpha_a = step_to_boundary(&s, &ds_a).min(step_to_boundary(&self.lam, &dl_a));
            let mu_a = (0..m)
                .map(|i| (s[i] + alpha_a * ds_a[i]) * (self.lam[i] + alpha_a * dl_a[i]))
                .sum::<f64>()
                / m as f64;
            // Keep complementarity from racing ahead of stationarity; the
            // Newton matrix degrades quickly once the duals of tight rows
            // blow up.
            let sigma = (mu_a / mu)
                .clamp(0.0, 1.0)
                .powi(3)
                .max((rd / (10.0 * mu)).min(1.0))
                .max((1e-3 * tol / mu).min(1.0));

            // corrector
            let target: Vec<f64> = (0..m).map(|i| sigma * mu - ds_a[i] * dl_a[i]).collect();
            let w: Vec<f64> = target.iter().zip(&s).map(|(t, s)| t / s).collect();
            let (wx, wy) = self.gt_mul(&w);
            let rx: Vec<f64> = gx.iter().zip(&wx).map(|(g, w)| -g - w).collect();
            let (dx, dy) = self.newton(&fac, &rx, -gy - wy);
            let ds = self.ds(&dx, dy);
            let dl: Vec<f64> = (0..m)
                .map(|i| (target[i] - self.lam[i] * s[i] - self.lam[i] * ds[i]) / s[i])
                .collect();
            let alpha = (STEP_FRACTION * step_to_boundary(&s, &ds).min(step_to_boundary(&self.lam, &dl))).min(1.0);
            for (x, d) in self.x.iter_mut().zip(&dx) {
                *x += alpha * d;
            }
            self.y += alpha * dy;
            for (l, d) in self.lam.iter_mut().zip(&dl) {
                *l = (*l + alpha * d).max(f64::MIN_POSITIVE);
            }
        }
        if best.as_ref().is_some_and(|b| b.0 <= tol) {
            return Ok(self.restore(best));
        }
        Err(Error::Solver(format!(
            "no convergence within {max_iter} iterations"
        )))
    }

    fn dual_residual(&self, gx: &[f64], gy: f64) -> f64 {
        let (lx, ly) = self.gt_mul(&self.lam);
        gx.iter()
            .zip(&lx)
            .map(|(a, b)| (a + b).abs())
            .fold((gy + ly).abs() * f64::from(u8::from(self.mode.has_y)), f64::max)
    }

    fn restore(&mut self, best: Option<Iterate>) -> usize {
        let (_, x, y, lam, iter) = best.expect("restore needs an iterate");
        self.x = x;
        self.y = y;
        self.lam = lam;
        iter
    }
}

impl Factor {
    fn matvec(&self, lay: &Layout, vx: &[f64], vy: f64, has_y: bool) -> (Vec<f64>, f64) {
        // refine against the unregularised matrix
        let mut out: Vec<f64> = self.diag.iter().zip(vx).map(|(d, v)| (d - PRIMAL_REG) * v).collect();
        for (b, cols) in lay.blocks.iter().zip(&self.cols) {
            for &(lo, hi, w) in cols {
                let s: f64 = vx[b.off + lo..b.off + hi].iter().sum::<f64>() * w;
                for o in &mut out[b.off + lo..b.off + hi] {
                    *o += s;
                }
            }
        }
        let mut load = vec![0.0; lay.nslots()];
        for (v, &x) in vx.iter().enumerate() {
            load[lay.pos[v]] += x;
        }
        for (v, o) in out.iter_mut().enumerate() {
            let p = lay.pos[v];
            *o += self.mslot[p] * load[p];
        }
        if !has_y {
            return (out, 0.0);
        }
        for (o, k) in out.iter_mut().zip(&self.kxy) {
            *o += k * vy;
        }
        (out, dot(&self.kxy, vx) + self.kyy * vy)
    }

    /// Block-diagonal `B^{-1} r`.
    fn apply_binv(&self, lay: &Layout, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; lay.nx];
        for (b, bk) in lay.blocks.iter().zip(&self.binv) {
            let rb = DVector::from_column_slice(&r[b.off..b.off + b.len]);
            let yb = bk * rb;
            out[b.off..b.off + b.len].copy_from_slice(yb.as_slice());
        }
        out
    }

    fn slot_sums(lay: &Layout, v: &[f64]) -> DVector<f64> {
        let mut t = DVector::<f64>::zeros(lay.nslots());
        for (i, &val) in v.iter().enumerate() {
            t[lay.pos[i]] += val;
        }
        t
    }

    /// `out += s * B^{-1} V q`.
    fn add_binv_v(&self, lay: &Layout, q: &DVector<f64>, s: f64, out: &mut [f64]) {
        let qx: Vec<f64> = lay.pos.iter().map(|&p| q[p]).collect();
        for (o, c) in out.iter_mut().zip(self.apply_binv(lay, &qx)) {
            *o += s * c;
        }
    }

    fn solve_xx(&self, lay: &Layout, r: &[f64]) -> Vec<f64> {
        let mut out = self.apply_binv(lay, r);
        let q = self.kslot.solve(&Self::slot_sums(lay, &out));
        self.add_binv_v(lay, &q, -1.0, &mut out);
        out
    }

    fn solve_peak(&self, lay: &Layout, rx: &[f64], ry: f64) -> (Vec<f64>, f64) {
        let mut out = self.apply_binv(lay, rx);
        let kt = self.kslot.solve(&Self::slot_sums(lay, &out));
        let dy = (ry - dot(&self.slot_a, kt.as_slice())) / self.slot_den;
        let nu = -kt - &self.kinv_a * dy;
        self.add_binv_v(lay, &nu, 1.0, &mut out);
        (out, dy)
    }
}

fn cholesky_regularised(mut k: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = k.diagonal().iter().copied().fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        if let Some(c) = k.clone().cholesky() {
            return Ok(c);
        }
        let next = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        for i in 0..k.nrows() {
            k[(i, i)] += next - reg;
        }
        reg = next;
    }
    Err(Error::Solver("slot system is not positive definite".into()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

/// Initial multipliers: `mu0 / s` on every row.
fn initial_duals(s: &[f64], mu0: f64) -> Vec<f64> {
    s.iter().map(|&si| mu0 / si).collect()
}

/// Everything `solve` needs besides the IPM itself.
struct Prepared {
    lay: Layout,
    base_plans: Vec<Vec<f64>>,
    s_min: f64,
    s_min_slot: Option<usize>,
    /// For each EV and active term, the md row it owns.
    term_md: Vec<Vec<Option<usize>>>,
}

fn prepare(prob: &StepProblem) -> std::result::Result<Prepared, String> {
    let n = prob.ev_count();
    let cur = prob.current_slot;
    let ub = prob.e_max_slot;
    let masks: Vec<Vec<bool>> = (0..n).map(|k| free_mask(prob, k)).collect();
    let base_plans: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..SLOTS_PER_DAY).map(|t| fixed_value(prob, k, t)).collect())
        .collect();
    let mut fixed_load = vec![0.0; SLOTS_PER_DAY];
    for p in &base_plans {
        for t in 0..SLOTS_PER_DAY {
            fixed_load[t] += p[t];
        }
    }
    for t in cur..SLOTS_PER_DAY {
        if fixed_load[t] > prob.e_trans_slot + PIN_TOL {
            return Err(format!(
                "slot {t}: pinned load {:.4} kWh exceeds the transformer limit {:.4} kWh",
                fixed_load[t], prob.e_trans_slot
            ));
        }
    }

    let mut slot_pos = [usize::MAX; SLOTS_PER_DAY];
    let mut slot_abs = Vec::new();
    for t in 0..SLOTS_PER_DAY {
        if masks.iter().any(|m| m[t]) {
            slot_pos[t] = slot_abs.len();
            slot_abs.push(t);
        }
    }

    let mut blocks = Vec::with_capacity(n);
    let mut md = Vec::new();
    let mut pos = Vec::new();
    let mut cost = Vec::new();
    let mut term_md = Vec::with_capacity(n);
    for k in 0..n {
        let slots: Vec<usize> = (0..SLOTS_PER_DAY).filter(|&t| masks[k][t]).collect();
        let off = pos.len();
        for &t in &slots {
            pos.push(slot_pos[t]);
            cost.push(prob.w2 * prob.prices[t]);
        }
        let carried = prob.decision(k).carried_kwh;
        let mut sterms = Vec::new();
        let mut tmd = Vec::new();
        for term in terms(prob, k) {
            let lo = slots.partition_point(|&t| t < term.start);
            let hi = slots.partition_point(|&t| t < term.end);
            let fixed: f64 = carried + base_plans[k][term.start..term.end].iter().sum::<f64>();
            let need = requirement(prob, k, &term, &masks[k]) - fixed;
            let capacity = ub * (hi - lo) as f64;
            let mut row = None;
            if need > PIN_TOL {
                if need > capacity + 1e-6 {
                    return Err(format!(
                        "{}: window [{}, {}) can deliver at most {:.4} kWh, {:.4} kWh required",
                        prob.decision(k).ev_ref,
                        term.start,
                        term.end,
                        fixed + capacity,
                        fixed + need
                    ));
                }
                if hi > lo {
                    row = Some(md.len());
                    md.push(Md {
                        block: k,
                        lo,
                        hi,
                        b: need.min(capacity - MIN_SLACK),
                    });
                }
            }
            tmd.push(row);
            sterms.push(STerm {
                lo,
                hi,
                coef: term.weight * prob.w1,
                c: 1.0 + fixed,
                md: row,
            });
        }
        blocks.push(Block {
            off,
            len: slots.len(),
            slots,
            terms: sterms,
        });
        term_md.push(tmd);
    }

    let b_tr = slot_abs
        .iter()
        .map(|&t| {
            let room = prob.e_trans_slot - fixed_load[t];
            if room < MIN_SLACK {
                room.max(0.0) + MIN_SLACK
            } else {
                room
            }
        })
        .collect();
    let b_pk = slot_abs
        .iter()
        .map(|&t| prob.e_old_peak_slot - fixed_load[t])
        .collect();
    let mut s_min = 0.0;
    let mut s_min_slot = None;
    for t in cur..SLOTS_PER_DAY {
        if slot_pos[t] == usize::MAX && fixed_load[t] - prob.e_old_peak_slot > s_min {
            s_min = fixed_load[t] - prob.e_old_peak_slot;
            s_min_slot = Some(t);
        }
    }
    Ok(Prepared {
        lay: Layout {
            nx: pos.len(),
            ub,
            blocks,
            md,
            pos,
            slot_abs,
            b_tr,
            b_pk,
            cost,
        },
        base_plans,
        s_min,
        s_min_slot,
        term_md,
    })
}

/// Interior starting point for x: half the box, shrunk so every slot keeps
/// half of its transformer room.
fn initial_x(lay: &Layout) -> Vec<f64> {
    let mut count = vec![0usize; lay.nslots()];
    for &p in &lay.pos {
        count[p] += 1;
    }
    lay.pos
        .iter()
        .map(|&p| (0.5 * lay.ub).min(0.5 * lay.b_tr[p] / count[p] as f64))
        .collect()
}

fn initial_mu(ipm: &Ipm) -> f64 {
    let args = ipm.log_args();
    let (gx, gy) = ipm.grad(&args);
    let g = gx.iter().fold(gy.abs(), |a, b| a.max(b.abs()));
    0.1 * g.max(1.0) * ipm.lay.ub.min(1.0)
}

/// Finds x strictly inside the min-delivery rows, or proves there is none.
fn phase_one(lay: &mut Layout, x0: Vec<f64>, opts: &SolverOptions) -> Result<std::result::Result<(Vec<f64>, usize), String>> {
    let shortfall = lay
        .md
        .iter()
        .map(|md| {
            let off = lay.blocks[md.block].off;
            md.b - x0[off + md.lo..off + md.hi].iter().sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let mode = Mode {
        logs: false,
        costs: false,
        has_y: true,
        y_cost: 1.0,
        md_y: -1.0,
        peak: false,
        y_lo: -1.0,
    };
    let mut ipm = Ipm {
        lay: &*lay,
        mode,
        rows: Rows::new(lay, &mode),
        x: x0,
        y: shortfall.max(0.0) + 1.0,
        lam: Vec::new(),
    };
    let mu0 = 0.1;
    ipm.lam = initial_duals(&ipm.slacks(), mu0);
    let iters = ipm.run(opts.tol, opts.max_iter, |s| s.y < -PHASE1_MARGIN)?;
    let (x, y) = (ipm.x, ipm.y);
    if y > PHASE1_INFEASIBLE {
        return Ok(Err(format!(
            "minimum-delivery requirements cannot all be met: shortfall {y:.3e} kWh"
        )));
    }
    if y >= 0.0 {
        for md in &mut lay.md {
            md.b -= y + 1e-9;
        }
    }
    Ok(Ok((x, iters)))
}

/// Solves the step problem. Returns `Infeasible` with a certificate when the
/// constraints cannot all hold, and an error if the iteration cap is hit.
pub fn solve(prob: &StepProblem, opts: &SolverOptions) -> Result<SolveOutcome> {
    let started = Instant::now();
    prob.validate()?;
    let mut prep = match prepare(prob) {
        Ok(p) => p,
        Err(cert) => return Ok(SolveOutcome::Infeasible(cert)),
    };
    let pw = prob.peak_weight();
    let n = prob.ev_count();
    let mut mult = Multipliers::zeros(prob);
    let mut stats = SolverStats::default();

    let mut plans = prep.base_plans.clone();
    let e_inc;
    if prep.lay.nx == 0 {
        e_inc = implied_e_inc(prob, &plans);
        if pw > 0.0 {
            let load = super::problem::slot_loads(&plans);
            let argmax = (prob.current_slot..SLOTS_PER_DAY)
                .max_by(|&a, &b| load[a].total_cmp(&load[b]).then(b.cmp(&a)))
                .expect("current slot is in range");
            if e_inc > 0.0 {
                mult.peak[argmax] = pw;
            } else {
                mult.e_inc_lower = pw;
            }
        }
    } else {
        let mut x0 = initial_x(&prep.lay);
        let needs_phase1 = prep.lay.md.iter().any(|md| {
            let off = prep.lay.blocks[md.block].off;
            x0[off + md.lo..off + md.hi].iter().sum::<f64>() <= md.b
        });
        if needs_phase1 {
            match phase_one(&mut prep.lay, x0, opts)? {
                Ok((x, it)) => {
                    x0 = x;
                    stats.phase1_iterations = it;
                }
                Err(cert) => return Ok(SolveOutcome::Infeasible(cert)),
            }
        }
        let lay = &prep.lay;
        let peak = pw > 0.0;
        let mode = Mode {
            logs: true,
            costs: true,
            has_y: peak,
            y_cost: pw,
            md_y: 0.0,
            peak,
            y_lo: prep.s_min,
        };
        let y0 = if peak {
            let mut load = vec![0.0; lay.nslots()];
            for (v, &x) in x0.iter().enumerate() {
                load[lay.pos[v]] += x;
            }
            let need = load
                .iter()
                .zip(&lay.b_pk)
                .map(|(l, b)| l - b)
                .fold(prep.s_min, f64::max);
            need + lay.ub
        } else {
            0.0
        };
        let mut ipm = Ipm {
            lay,
            mode,
            rows: Rows::new(lay, &mode),
            x: x0,
            y: y0,
            lam: Vec::new(),
        };
        let mu0 = initial_mu(&ipm);
        ipm.lam = initial_duals(&ipm.slacks(), mu0);
        stats.iterations = ipm.run(opts.tol, opts.max_iter, |_| false)?;

        let r = ipm.rows;
        for (k, b) in lay.blocks.iter().enumerate() {
            for (j, &t) in b.slots.iter().enumerate() {
                let v = b.off + j;
                plans[k][t] = ipm.x[v].clamp(0.0, lay.ub);
                mult.lower[k][t] = ipm.lam[v];
                mult.upper[k][t] = ipm.lam[r.up + v];
            }
            for (ti, row) in prep.term_md[k].iter().enumerate() {
                if let Some(i) = row {
                    mult.min_delivery[k][ti] = ipm.lam[r.md + i];
                }
            }
        }
        for (p, &t) in lay.slot_abs.iter().enumerate() {
            mult.transformer[t] = ipm.lam[r.tr + p];
            if peak {
                mult.peak[t] = ipm.lam[r.pk + p];
            }
        }
        if peak {
            match prep.s_min_slot {
                Some(t) => mult.peak[t] = ipm.lam[r.ylo],
                None => mult.e_inc_lower = ipm.lam[r.ylo],
            }
        }
        e_inc = implied_e_inc(prob, &plans).max(prep.s_min);
    }
    debug_assert_eq!(plans.len(), n);

    let objective_value = objective(prob, &plans, e_inc);
    let mut plan = SchedulePlan {
        plans,
        e_inc,
        objective_value,
        multipliers: mult,
        stats,
    };
    plan.stats.kkt_residual = kkt_residual(prob, &plan);
    plan.stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(SolveOutcome::Plan(plan))
}
