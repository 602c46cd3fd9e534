//! Quadrature rules shared by the closed-form z-integral and the brute-force
//! oracle: Gauss-Legendre nodes/weights (Newton iteration on the three-term
//! recurrence), panelized rules for oscillatory integrands, and a tanh-sinh
//! rule used as an independent second radial family.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    if n == 1 {
        return (x, 1.0);
    }
    let d = n as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, d)
}

/// Nodes/weights of an n-point Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + c * t).collect(),
        w.iter().map(|&t| c * t).collect(),
    )
}

/// Composite rule: `panels` equal panels over [a, b], each with an
/// n-point Gauss-Legendre rule.
pub fn panel_rule(n_per_panel: usize, panels: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n_per_panel);
    let mut nodes = Vec::with_capacity(n_per_panel * panels);
    let mut weights = Vec::with_capacity(n_per_panel * panels);
    let h = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let c = 0.5 * h;
        let mid = lo + c;
        for i in 0..n_per_panel {
            nodes.push(mid + c * x[i]);
            weights.push(c * w[i]);
        }
    }
    (nodes, weights)
}

/// Tanh-sinh (double exponential) rule on [a, b]; independent of the
/// Gauss-Legendre family. `level` sets the step 2^-level; nodes with weights
/// below f64 underflow are dropped.
pub fn tanh_sinh_on(level: u32, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 0.5f64.powi(level as i32);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let kmax = (4.0 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let s = half_pi * t.sinh();
        let x = s.tanh();
        let w = h * half_pi * t.cosh() / s.cosh().powi(2);
        if w * c < 1e-290 || (1.0 - x.abs()) < 1e-16 {
            continue;
        }
        nodes.push(mid + c * x);
        weights.push(c * w);
    }
    (nodes, weights)
}
