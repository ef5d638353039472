//! Derivative-free minimizers used for index refinement.

/// Best point found by a minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Relative gap below which two objective values count as tied.
///
/// Piecewise-constant objectives produce exact ties that rescaling the
/// objective turns into rounding-level differences; treating those as ties
/// keeps every comparison, and so the search path, unchanged.
pub const TIE_RTOL: f64 = 1e-12;

/// `a < b` by more than rounding noise.
pub fn definitely_less(a: f64, b: f64) -> bool {
    a < b - TIE_RTOL * a.abs().max(b.abs())
}

/// Golden-section search on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol` or after `max_evals`
/// objective calls. Returns the best point evaluated, which for non-unimodal
/// objectives need not lie in the final bracket.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64, max_evals: usize) -> Minimum {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    let mut best = if definitely_less(fd, fc) { (d, fd) } else { (c, fc) };

    while (b - a) > tol && evals < max_evals {
        if !definitely_less(fd, fc) {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if definitely_less(fc, best.1) {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if definitely_less(fd, best.1) {
                best = (d, fd);
            }
        }
        evals += 1;
    }
    Minimum { x: vec![best.0], value: best.1, evals }
}

/// Box constraints for [`nelder_mead`]. Points are projected onto the box.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex edge per coordinate.
    pub step: Vec<f64>,
    pub max_evals: usize,
    /// Stop once every vertex is within this distance of the best vertex.
    pub tol: f64,
}

/// Bounded Nelder-Mead simplex search with standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Minimum {
    let dim = start.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut x0 = start.to_vec();
    bounds.project(&mut x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for i in 0..dim {
        let mut v = x0.clone();
        v[i] += opts.step[i];
        if v[i] > bounds.upper[i] {
            v[i] = x0[i] - opts.step[i];
        }
        bounds.project(&mut v);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    loop {
        sort_simplex(&mut simplex);
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| dist(v, &simplex[0].0))
            .fold(0.0, f64::max);
        if diameter < opts.tol || evals >= opts.max_evals {
            break;
        }

        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            bounds.project(&mut p);
            p
        };

        let reflected = along(1.0);
        let fr = eval(&reflected, &mut evals);
        if definitely_less(fr, simplex[0].1) {
            let expanded = along(2.0);
            let fe = eval(&expanded, &mut evals);
            simplex[dim] = if definitely_less(fe, fr) { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if definitely_less(fr, simplex[dim - 1].1) {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if definitely_less(fr, worst.1) {
            let p = along(0.5);
            let fp = eval(&p, &mut evals);
            (p, fp)
        } else {
            let p = along(-0.5);
            let fp = eval(&p, &mut evals);
            (p, fp)
        };
        if definitely_less(fc, worst.1.min(fr)) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            bounds.project(&mut p);
            let fp = eval(&p, &mut evals);
            *vertex = (p, fp);
        }
    }

    sort_simplex(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals }
}

/// Stable insertion sort by value; tied vertices keep their order.
fn sort_simplex(simplex: &mut [(Vec<f64>, f64)]) {
    for i in 1..simplex.len() {
        let mut j = i;
        while j > 0 && definitely_less(simplex[j].1, simplex[j - 1].1) {
            simplex.swap(j, j - 1);
            j -= 1;
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}
