//! Nelder-Mead simplex minimization with restarts.
//!
//! Objectives may expose an affine image of the parameter vector (for the
//! degradation model, the linear predictor of every observation row). Every
//! simplex move is an affine combination of vertices, so the image of a trial
//! point is combined from the images of its parents instead of being
//! recomputed; images are refreshed exactly at a fixed cadence to bound
//! rounding drift.

use serde::{Deserialize, Serialize};

/// A function to minimize.
pub trait Objective: Sync {
    /// Length of the affine image carried with each point; 0 disables it.
    fn image_len(&self) -> usize {
        0
    }

    /// Computes the affine image of `x` from scratch.
    fn image(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Objective value at `x` with its affine image `img`.
    fn value(&self, x: &[f64], img: &[f64]) -> f64;

    /// Scalar recorded alongside each trace point.
    fn marker(&self, _x: &[f64]) -> f64 {
        f64::NAN
    }

    /// Called after a local search converges; may return a better point
    /// (lower or equal value) to restart from.
    fn polish(&self, _x: &[f64], _f: f64) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Adapts a plain closure.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn value(&self, x: &[f64], _img: &[f64]) -> f64 {
        (self.0)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below `ftol · (|f_best| + 1)`.
    pub ftol: f64,
    /// Stop when every vertex lies within `xtol` (max-norm) of the best.
    pub xtol: f64,
    /// Additional local searches started around the incumbent.
    pub restarts: usize,
    /// Iterations between exact recomputation of vertex images.
    pub refresh_every: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 10_000,
            ftol: 1e-10,
            xtol: 1e-8,
            restarts: 3,
            refresh_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evals: usize,
    pub value: f64,
    pub marker: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Whether the last local search met its tolerances before the budget ran out.
    pub converged: bool,
    pub restarts_used: usize,
    /// Best-so-far value each time it improved.
    pub trace: Vec<TracePoint>,
}

struct Vertex {
    x: Vec<f64>,
    img: Vec<f64>,
    f: f64,
}

struct Search<'a, O: Objective + ?Sized> {
    obj: &'a O,
    evals: usize,
    best: f64,
    best_x: Vec<f64>,
    trace: Vec<TracePoint>,
}

impl<O: Objective + ?Sized> Search<'_, O> {
    fn eval(&mut self, x: &[f64], img: &[f64]) -> f64 {
        self.evals += 1;
        let mut f = self.obj.value(x, img);
        if f.is_nan() {
            f = f64::INFINITY;
        }
        if f < self.best {
            self.best = f;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
            self.trace.push(TracePoint {
                evals: self.evals,
                value: f,
                marker: self.obj.marker(x),
            });
        }
        f
    }

    fn vertex(&mut self, x: Vec<f64>) -> Vertex {
        let mut img = vec![0.0; self.obj.image_len()];
        self.obj.image(&x, &mut img);
        let f = self.eval(&x, &img);
        Vertex { x, img, f }
    }
}

fn combine(out: &mut [f64], a: f64, u: &[f64], b: f64, v: &[f64]) {
    for ((o, &p), &q) in out.iter_mut().zip(u).zip(v) {
        *o = a * p + b * q;
    }
}

/// `v ← b + s (v - b)` in place.
fn shrink_toward(v: &mut [f64], b: &[f64], s: f64) {
    for (p, &q) in v.iter_mut().zip(b) {
        *p = (1.0 - s) * q + s * *p;
    }
}

/// Minimizes `obj` from `x0` with per-coordinate initial simplex steps.
pub fn minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> Minimum {
    assert_eq!(x0.len(), steps.len());
    let mut search = Search {
        obj,
        evals: 0,
        best: f64::INFINITY,
        best_x: x0.to_vec(),
        trace: Vec::new(),
    };
    if x0.is_empty() {
        let f = search.eval(x0, &vec![0.0; obj.image_len()]);
        return Minimum {
            x: vec![],
            value: f,
            evals: 1,
            converged: true,
            restarts_used: 0,
            trace: search.trace,
        };
    }

    let mut start = x0.to_vec();
    let mut converged = false;
    let mut restarts_used = 0;
    let mut last_best = f64::INFINITY;
    for round in 0..=opts.restarts {
        if search.evals >= opts.max_evals {
            break;
        }
        converged = local_search(&mut search, &start, steps, opts);
        let mut x = search.best_x.clone();
        let mut f = search.best;
        if let Some((px, pf)) = obj.polish(&x, f) {
            if pf <= f {
                x = px;
                f = pf;
                if f < search.best {
                    search.best = f;
                    search.best_x = x.clone();
                    search.trace.push(TracePoint {
                        evals: search.evals,
                        value: f,
                        marker: obj.marker(&x),
                    });
                }
            }
        }
        restarts_used = round;
        let improved = last_best - f > opts.ftol * (f.abs() + 1.0);
        if round > 0 && !improved {
            break;
        }
        last_best = f;
        start = x;
    }

    Minimum {
        x: search.best_x,
        value: search.best,
        evals: search.evals,
        converged,
        restarts_used,
        trace: search.trace,
    }
}

/// One Nelder-Mead run with dimension-adaptive coefficients.
fn local_search<O: Objective + ?Sized>(
    search: &mut Search<'_, O>,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> bool {
    let n = x0.len();
    let nf = n as f64;
    let (reflect, expand, contract, shrink) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let m = search.obj.image_len();

    let mut simplex: Vec<Vertex> = Vec::with_capacity(n + 1);
    simplex.push(search.vertex(x0.to_vec()));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        simplex.push(search.vertex(x));
    }

    let mut sum_x = vec![0.0; n];
    let mut sum_img = vec![0.0; m];
    let resum = |simplex: &[Vertex], sum_x: &mut [f64], sum_img: &mut [f64]| {
        sum_x.iter_mut().for_each(|v| *v = 0.0);
        sum_img.iter_mut().for_each(|v| *v = 0.0);
        for v in simplex {
            sum_x.iter_mut().zip(&v.x).for_each(|(s, a)| *s += a);
            sum_img.iter_mut().zip(&v.img).for_each(|(s, a)| *s += a);
        }
    };
    resum(&simplex, &mut sum_x, &mut sum_img);

    let mut cx = vec![0.0; n];
    let mut cimg = vec![0.0; m];
    let mut rx = vec![0.0; n];
    let mut rimg = vec![0.0; m];
    let mut tx = vec![0.0; n];
    let mut timg = vec![0.0; m];
    let mut iter = 0usize;

    loop {
        simplex.sort_by(|a, b| a.f.total_cmp(&b.f));
        let fbest = simplex[0].f;
        let fworst = simplex[n].f;
        let spread = fworst - fbest;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.x.iter().zip(&simplex[0].x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (fbest.is_finite() && spread <= opts.ftol * (fbest.abs() + 1.0)) || diameter <= opts.xtol {
            return true;
        }
        if search.evals >= opts.max_evals {
            return false;
        }

        iter += 1;
        if m > 0 && iter % opts.refresh_every.max(1) == 0 {
            for v in simplex.iter_mut() {
                search.obj.image(&v.x, &mut v.img);
            }
            resum(&simplex, &mut sum_x, &mut sum_img);
        }

        // Centroid of all vertices but the worst.
        let inv = 1.0 / nf;
        for i in 0..n {
            cx[i] = (sum_x[i] - simplex[n].x[i]) * inv;
        }
        for ((c, s), w) in cimg.iter_mut().zip(&sum_img).zip(&simplex[n].img) {
            *c = (s - w) * inv;
        }

        combine(&mut rx, 1.0 + reflect, &cx, -reflect, &simplex[n].x);
        combine(&mut rimg, 1.0 + reflect, &cimg, -reflect, &simplex[n].img);
        let fr = search.eval(&rx, &rimg);

        let replace = if fr < fbest {
            combine(&mut tx, 1.0 + expand, &cx, -expand, &simplex[n].x);
            combine(&mut timg, 1.0 + expand, &cimg, -expand, &simplex[n].img);
            let fe = search.eval(&tx, &timg);
            if fe < fr {
                Some((true, fe))
            } else {
                Some((false, fr))
            }
        } else if fr < simplex[n - 1].f {
            Some((false, fr))
        } else {
            let outside = fr < fworst;
            let coef = if outside { contract } else { -contract };
            combine(&mut tx, 1.0 + coef, &cx, -coef, &simplex[n].x);
            combine(&mut timg, 1.0 + coef, &cimg, -coef, &simplex[n].img);
            let fc = search.eval(&tx, &timg);
            if (outside && fc <= fr) || (!outside && fc < fworst) {
                Some((true, fc))
            } else {
                None
            }
        };

        match replace {
            Some((use_trial, f)) => {
                let (nx, nimg) = if use_trial { (&mut tx, &mut timg) } else { (&mut rx, &mut rimg) };
                let worst = &mut simplex[n];
                for i in 0..n {
                    sum_x[i] += nx[i] - worst.x[i];
                }
                for ((s, a), w) in sum_img.iter_mut().zip(nimg.iter()).zip(&worst.img) {
                    *s += a - w;
                }
                // The old worst buffers become scratch space.
                std::mem::swap(&mut worst.x, nx);
                std::mem::swap(&mut worst.img, nimg);
                worst.f = f;
            }
            None => {
                let (best, rest) = simplex.split_first_mut().unwrap();
                for v in rest.iter_mut() {
                    shrink_toward(&mut v.x, &best.x, shrink);
                    shrink_toward(&mut v.img, &best.img, shrink);
                    v.f = search.eval(&v.x, &v.img);
                }
                resum(&simplex, &mut sum_x, &mut sum_img);
                if search.evals >= opts.max_evals {
                    return false;
                }
            }
        }
    }
}
