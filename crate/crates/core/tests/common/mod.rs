//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's metric code.
#![allow(dead_code)]

use condgan::autodiff::{Tape, Tensor};
use condgan::harness::{Trainer, TrainingConfig};
use condgan::nets::{
    discriminator_forward_batch, generator_forward_batch, DiscriminatorParams, GeneratorParams,
};
use condgan::objective::{combined_losses, generator_objective, r1_penalty, Formulation};

// ---------- 2-D Gaussian moments and FID by closed-form 2×2 eigenpairs ----------

pub fn mean2(xs: &[[f64; 2]]) -> [f64; 2] {
    let n = xs.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for p in xs {
        a += p[0];
        b += p[1];
    }
    [a / n, b / n]
}

/// `[[sxx, sxy], [sxy, syy]]` with the `n − 1` normalizer.
pub fn cov2(xs: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let m = mean2(xs);
    let n = xs.len() as f64 - 1.0;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in xs {
        let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    [[sxx / n, sxy / n], [sxy / n, syy / n]]
}

/// Eigenvalues (descending) and unit eigenvectors of a symmetric 2×2 matrix
/// via the rotation angle that diagonalizes it.
pub fn eig2(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (c, s) = (theta.cos(), theta.sin());
    let l1 = c * c * a + 2.0 * c * s * b + s * s * d;
    let l2 = s * s * a - 2.0 * c * s * b + c * c * d;
    ([l1, l2], [[c, s], [-s, c]])
}

fn mat_mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn sqrt_psd2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (l, v) = eig2(m);
    let r = [l[0].max(0.0).sqrt(), l[1].max(0.0).sqrt()];
    // v rows are eigenvectors: M = Σ r_k v_k v_kᵀ
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += r[k] * v[k][i] * v[k][j];
            }
        }
    }
    out
}

pub fn fid2_oracle(real: &[[f64; 2]], fake: &[[f64; 2]]) -> f64 {
    let (mr, mf) = (mean2(real), mean2(fake));
    let (cr, cf) = (cov2(real), cov2(fake));
    let root = sqrt_psd2(cr);
    let inner = mat_mul2(mat_mul2(root, cf), root);
    let sym = [
        [inner[0][0], 0.5 * (inner[0][1] + inner[1][0])],
        [0.5 * (inner[0][1] + inner[1][0]), inner[1][1]],
    ];
    let (l, _) = eig2(sym);
    let cross = l[0].max(0.0).sqrt() + l[1].max(0.0).sqrt();
    let dm = (mr[0] - mf[0]).powi(2) + (mr[1] - mf[1]).powi(2);
    (dm + cr[0][0] + cr[1][1] + cf[0][0] + cf[1][1] - 2.0 * cross).max(0.0)
}

// ---------- KID and precision/recall by exhaustive loops ----------

pub fn cubic_kernel(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..x.len() {
        dot += x[i] * y[i];
    }
    let v = dot / x.len() as f64 + 1.0;
    v * v * v
}

/// Unbiased MMD² over all pairs.
pub fn mmd2_brute(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                kxx += cubic_kernel(&x[i], &x[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                kyy += cubic_kernel(&y[i], &y[j]);
            }
        }
    }
    let mut kxy = 0.0;
    for a in x {
        for b in y {
            kxy += cubic_kernel(a, b);
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Squared distance from each point to its k-th nearest other point.
fn knn_radii(xs: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..xs.len() {
        let mut ds = Vec::new();
        for j in 0..xs.len() {
            if j != i {
                ds.push(sqdist(&xs[i], &xs[j]));
            }
        }
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(ds[k - 1]);
    }
    out
}

fn covered_fraction(support: &[Vec<f64>], radii: &[f64], queries: &[Vec<f64>]) -> f64 {
    let mut hits = 0;
    for q in queries {
        let mut inside = false;
        for i in 0..support.len() {
            if sqdist(q, &support[i]) <= radii[i] {
                inside = true;
            }
        }
        if inside {
            hits += 1;
        }
    }
    hits as f64 / queries.len() as f64
}

pub fn precision_recall_brute(real: &[Vec<f64>], fake: &[Vec<f64>], k: usize) -> (f64, f64) {
    let p = covered_fraction(real, &knn_radii(real, k), fake);
    let r = covered_fraction(fake, &knn_radii(fake, k), real);
    (p, r)
}

// ---------- gradient checks by central differences ----------

/// What a finite-difference check compares.
#[derive(Debug, Clone, Copy)]
pub struct Counts {
    pub total: usize,
    pub within: usize,
    pub worst: f64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.total += other.total;
        self.within += other.within;
        self.worst = self.worst.max(other.worst);
    }

    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.total as f64
    }
}

/// `|a − n| / max(|a|, |n|)`, with both below `floor` counted as agreement.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

/// One discriminator/generator problem instance.
pub struct Problem {
    pub real: Tensor,
    pub z: Tensor,
    pub labels: Vec<usize>,
    pub g_lambda: f64,
    pub l_lambda: f64,
    pub formulation: Formulation,
    pub r1_weight: f64,
}

pub fn d_loss(g: &GeneratorParams, d: &DiscriminatorParams, p: &Problem) -> f64 {
    d_loss_and_grads(g, d, p, false).0
}

/// Discriminator loss (combined objective plus R1) and its gradients in
/// `DiscriminatorParams::named` order.
pub fn d_loss_and_grads(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    p: &Problem,
    want_grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let fake = g.sample(&p.z, &p.labels, p.g_lambda).unwrap();
    let mut tape = Tape::new();
    let vars = d.bind(&mut tape, true).unwrap();
    let xr = tape.constant(p.real.clone()).unwrap();
    let xf = tape.constant(fake).unwrap();
    let rt = discriminator_forward_batch(&mut tape, &vars, xr, &p.labels).unwrap();
    let ft = discriminator_forward_batch(&mut tape, &vars, xf, &p.labels).unwrap();
    let terms = combined_losses(&mut tape, (&rt).into(), (&ft).into(), p.l_lambda, p.formulation).unwrap();
    let r1 = r1_penalty(&mut tape, &vars, &rt, p.r1_weight).unwrap();
    let total = tape.add(terms.d_total, r1).unwrap();
    let value = tape.scalar_value(total).unwrap();
    if !want_grads {
        return (value, Vec::new());
    }
    let grads = tape.backward(total).unwrap();
    let g = vars.all().iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
    (value, g)
}

pub fn g_loss_and_grads(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    p: &Problem,
    want_grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let gv = g.bind(&mut tape, true).unwrap();
    let dv = d.bind(&mut tape, false).unwrap();
    let z = tape.constant(p.z.clone()).unwrap();
    let gen = generator_forward_batch(&mut tape, &gv, z, &p.labels, p.g_lambda).unwrap();
    let ft = discriminator_forward_batch(&mut tape, &dv, gen.output, &p.labels).unwrap();
    let loss = generator_objective(&mut tape, (&ft).into(), p.l_lambda, p.formulation).unwrap();
    let value = tape.scalar_value(loss).unwrap();
    if !want_grads {
        return (value, Vec::new());
    }
    let grads = tape.backward(loss).unwrap();
    let g = gv.all().iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
    (value, g)
}

/// Central differences with step `h` for every coordinate of the
/// discriminator and generator against the tape gradients.
pub fn check_problem(g: &GeneratorParams, d: &DiscriminatorParams, p: &Problem, h: f64, tol: f64) -> Counts {
    let mut counts = Counts {
        total: 0,
        within: 0,
        worst: 0.0,
    };
    let mut tally = |analytic: f64, numeric: f64| {
        let e = relative_error(analytic, numeric, 1e-7);
        counts.total += 1;
        if e < tol {
            counts.within += 1;
        }
        counts.worst = counts.worst.max(e);
    };

    let (_, dg) = d_loss_and_grads(g, d, p, true);
    let mut dp = d.clone();
    let n_tensors = dp.named().len();
    for ti in 0..n_tensors {
        let len = dp.named()[ti].1.len();
        for k in 0..len {
            let orig = dp.named()[ti].1.data()[k];
            dp.named_mut()[ti].1.data_mut()[k] = orig + h;
            let up = d_loss(g, &dp, p);
            dp.named_mut()[ti].1.data_mut()[k] = orig - h;
            let down = d_loss(g, &dp, p);
            dp.named_mut()[ti].1.data_mut()[k] = orig;
            tally(dg[ti][k], (up - down) / (2.0 * h));
        }
    }

    let (_, gg) = g_loss_and_grads(g, d, p, true);
    let mut gp = g.clone();
    let n_tensors = gp.named().len();
    for ti in 0..n_tensors {
        let len = gp.named()[ti].1.len();
        for k in 0..len {
            let orig = gp.named()[ti].1.data()[k];
            gp.named_mut()[ti].1.data_mut()[k] = orig + h;
            let up = g_loss_and_grads(&gp, d, p, false).0;
            gp.named_mut()[ti].1.data_mut()[k] = orig - h;
            let down = g_loss_and_grads(&gp, d, p, false).0;
            gp.named_mut()[ti].1.data_mut()[k] = orig;
            tally(gg[ti][k], (up - down) / (2.0 * h));
        }
    }
    counts
}

// ---------- training helpers ----------

/// Runs a config to completion and returns the metrics CSV text and the
/// parameter arrays of the final checkpoint.
pub fn run_to_end(cfg: &TrainingConfig) -> (String, Vec<(String, Vec<f64>)>) {
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    tr.run(None).unwrap();
    let arrays = tr
        .generator()
        .named()
        .into_iter()
        .chain(tr.discriminator().named())
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    (tr.log().to_csv_string(), arrays)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
