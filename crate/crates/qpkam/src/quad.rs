//! Gauss-Legendre quadrature on `[0, 1]` with a spectral integration matrix.

/// Legendre polynomial `P_n(u)` and its derivative.
fn legendre(n: usize, u: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, u);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * u * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (u * p1 - p0) / (u * u - 1.0);
    (p1, dp)
}

fn legendre_all(n: usize, u: f64) -> Vec<f64> {
    let mut v = vec![1.0, u];
    for k in 2..=n {
        let kf = k as f64;
        let p = ((2.0 * kf - 1.0) * u * v[k - 1] - (kf - 1.0) * v[k - 2]) / kf;
        v.push(p);
    }
    v.truncate(n + 1);
    v
}

/// Gauss-Legendre rule with a collocation integration matrix.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `integ[q][r] = int_0^{nodes[q]} l_r(s) ds` for the Lagrange basis `l_r`.
    pub integ: Vec<Vec<f64>>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut u = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, u);
                let du = p / dp;
                u -= du;
                if du.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, u);
            let w = 2.0 / ((1.0 - u * u) * dp * dp);
            nodes.push(0.5 * (u + 1.0));
            weights.push(0.5 * w);
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| nodes[*a].partial_cmp(&nodes[*b]).unwrap());
        let nodes: Vec<f64> = idx.iter().map(|&i| nodes[i]).collect();
        let weights: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
        // l_r(s) = w_r sum_k (2k+1) P_k(2 s_r - 1) P_k(2 s - 1)
        let pr: Vec<Vec<f64>> = nodes.iter().map(|&s| legendre_all(n, 2.0 * s - 1.0)).collect();
        let integ = nodes
            .iter()
            .map(|&t| {
                let u = 2.0 * t - 1.0;
                let p = legendre_all(n + 1, u);
                // int_0^t P_k(2s-1) ds
                let ik: Vec<f64> = (0..n)
                    .map(|k| if k == 0 { t } else { 0.5 * (p[k + 1] - p[k - 1]) / (2 * k + 1) as f64 })
                    .collect();
                (0..n)
                    .map(|r| {
                        weights[r] * (0..n).map(|k| (2 * k + 1) as f64 * pr[r][k] * ik[k]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        GaussLegendre { nodes, weights, integ }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials() {
        let g = GaussLegendre::new(16);
        let s: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| w * x.powi(20)).sum();
        assert!((s - 1.0 / 21.0).abs() < 1e-15);
        let f: Vec<f64> = g.nodes.iter().map(|x| x.powi(7)).collect();
        for (q, t) in g.nodes.iter().enumerate() {
            let v: f64 = g.integ[q].iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((v - t.powi(8) / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn integrates_exponential() {
        let g = GaussLegendre::new(16);
        let f: Vec<f64> = g.nodes.iter().map(|x| (3.0 * x).exp()).collect();
        for (q, t) in g.nodes.iter().enumerate() {
            let v: f64 = g.integ[q].iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((v - ((3.0 * t).exp() - 1.0) / 3.0).abs() < 1e-13);
        }
    }
}
