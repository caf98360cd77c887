//! Electrode graphs and the residual graph-convolution layer.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{self, init_batch_norm, init_linear};
use crate::nn::{Graph, ParamRegistry, Var};
use crate::signal::{Electrode, Montage};
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-12;

/// Self-loops plus uniform coupling: `I + ones / C`.
pub fn default_adjacency(c: usize) -> Tensor {
    Tensor::from_fn(&[c, c], |idx| {
        let diag = if idx / c == idx % c { 1.0 } else { 0.0 };
        diag + 1.0 / c as f64
    })
}

/// Gaussian kernel on electrode distances, bandwidth = median pairwise distance.
pub fn montage_adjacency(montage: &Montage) -> Result<Tensor> {
    let c = montage.len();
    if c < 2 {
        return Err(Error::Validation(
            "montage needs at least two electrodes".into(),
        ));
    }
    let dist = |i: usize, j: usize| -> f64 {
        let (p, q) = (montage[i].position, montage[j].position);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut pairs: Vec<f64> = (0..c)
        .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
        .map(|(i, j)| dist(i, j))
        .collect();
    pairs.sort_by(f64::total_cmp);
    let n = pairs.len();
    let sigma = if n % 2 == 1 {
        pairs[n / 2]
    } else {
        0.5 * (pairs[n / 2 - 1] + pairs[n / 2])
    };
    if !(sigma > 0.0) {
        return Err(Error::Validation(
            "montage electrodes are co-located".into(),
        ));
    }
    Ok(Tensor::from_fn(&[c, c], |idx| {
        let d = dist(idx / c, idx % c);
        (-d * d / (2.0 * sigma * sigma)).exp()
    }))
}

/// `D^{-1/2} A D^{-1/2}`; isolated nodes get a self-loop first.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] || s[0] == 0 {
        return Err(Error::Validation(format!(
            "adjacency must be square, got {s:?}"
        )));
    }
    let c = s[0];
    let mut m = a.data().to_vec();
    for i in 0..c {
        for j in 0..c {
            let (x, y) = (m[i * c + j], m[j * c + i]);
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Validation(format!(
                    "adjacency entry ({i},{j}) = {x}"
                )));
            }
            if (x - y).abs() > SYMMETRY_TOL * x.abs().max(y.abs()).max(1.0) {
                return Err(Error::Validation(format!(
                    "adjacency is not symmetric at ({i},{j}): {x} vs {y}"
                )));
            }
        }
    }
    let mut deg: Vec<f64> = (0..c).map(|i| m[i * c..(i + 1) * c].iter().sum()).collect();
    for i in 0..c {
        if deg[i] == 0.0 {
            m[i * c + i] = 1.0;
            deg[i] = 1.0;
        }
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    Tensor::new(
        &[c, c],
        (0..c * c)
            .map(|idx| inv[idx / c] * m[idx] * inv[idx % c])
            .collect(),
    )
}

/// One electrode per non-empty line: `name x y z`; `#` starts a comment.
pub fn parse_montage(text: &str) -> Result<Montage> {
    let mut out = Montage::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "montage line {}: expected `name x y z`, got {line:?}",
                lineno + 1
            )));
        }
        let mut position = [0.0; 3];
        for (p, f) in position.iter_mut().zip(&fields[1..]) {
            *p = f.parse().map_err(|_| {
                Error::Format(format!("montage line {}: bad coordinate {f:?}", lineno + 1))
            })?;
        }
        if out.iter().any(|e| e.name == fields[0]) {
            return Err(Error::Format(format!(
                "montage repeats electrode {}",
                fields[0]
            )));
        }
        out.push(Electrode {
            name: fields[0].to_string(),
            position,
        });
    }
    Ok(out)
}

pub fn read_montage(path: &Path) -> Result<Montage> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_montage(&text)
}

pub fn init_gcn(reg: &mut ParamRegistry, prefix: &str, d: usize, rng: &mut impl Rng) -> Result<()> {
    init_linear(reg, &format!("{prefix}.w1"), d, d, rng)?;
    init_linear(reg, &format!("{prefix}.w2"), d, d, rng)?;
    init_batch_norm(reg, &format!("{prefix}.bn_inner"), d)?;
    init_batch_norm(reg, &format!("{prefix}.bn_outer"), d)
}

/// `eps(A_hat eps(E W1) W2 + E)` on node features `(N, C, D)`, with `eps`
/// batch norm over the feature axis followed by ELU.
pub fn gcn_layer(
    g: &mut Graph,
    reg: &ParamRegistry,
    prefix: &str,
    x: Var,
    a_hat: &Tensor,
) -> Result<Var> {
    let h = layers::linear(g, reg, &format!("{prefix}.w1"), x)?;
    let h = layers::bn_elu(g, reg, &format!("{prefix}.bn_inner"), h, 2)?;
    let h = layers::linear(g, reg, &format!("{prefix}.w2"), h)?;
    let h = g.propagate(a_hat, h)?;
    let h = g.add(h, x)?;
    layers::bn_elu(g, reg, &format!("{prefix}.bn_outer"), h, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut a = Tensor::zeros(&[c, c]);
        for i in 0..c {
            for j in i..c {
                let v: f64 = if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..2.0)
                };
                a.data_mut()[i * c + j] = v;
                a.data_mut()[j * c + i] = v;
            }
        }
        a
    }

    fn spectral_radius(m: &Tensor) -> f64 {
        let c = m.dim(0);
        let mut v = vec![1.0; c];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..c)
                .map(|i| (0..c).map(|j| m.data()[i * c + j] * v[j]).sum())
                .collect();
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return 0.0;
            }
            lambda = n / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / n).collect();
        }
        lambda
    }

    #[test]
    fn identity_and_all_ones() {
        let i = Tensor::from_fn(&[4, 4], |k| if k / 4 == k % 4 { 1.0 } else { 0.0 });
        assert_eq!(normalize_adjacency(&i).unwrap(), i);
        let n = normalize_adjacency(&Tensor::full(&[4, 4], 1.0)).unwrap();
        assert!(n.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn asymmetric_rejected_isolated_gets_loop() {
        let a = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(normalize_adjacency(&a), Err(Error::Validation(_))));
        let b = Tensor::new(&[2, 2], vec![0.0, 0.0, 0.0, 2.0]).unwrap();
        let n = normalize_adjacency(&b).unwrap();
        for (u, v) in n.data().iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn spectral_radius_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for c in [3, 5, 8, 16] {
            for _ in 0..5 {
                let n = normalize_adjacency(&random_sym(c, &mut rng)).unwrap();
                assert!(spectral_radius(&n) <= 1.0 + 1e-9);
            }
            let n = normalize_adjacency(&default_adjacency(c)).unwrap();
            assert!((spectral_radius(&n) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn montage_parse_and_kernel() {
        let text = "# cap\nFz 0 1 0\nCz 0 0 1\nPz 0 -1 0 # back\n";
        let m = parse_montage(text).unwrap();
        assert_eq!(m.len(), 3);
        let a = montage_adjacency(&m).unwrap();
        assert_eq!(a.data()[0], 1.0);
        assert!((a.data()[1] - a.data()[3]).abs() == 0.0);
        assert!(parse_montage("Fz 0 1").is_err());
        assert!(parse_montage("Fz 0 1 x").is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (c, d) = (5, 3);
        let mut reg = ParamRegistry::new();
        init_gcn(&mut reg, "gcn", d, &mut rng).unwrap();
        let a = random_sym(c, &mut rng);
        let x = Tensor::from_fn(&[2, c, d], |_| rng.gen_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);
        let pa = Tensor::from_fn(&[c, c], |k| a.data()[perm[k / c] * c + perm[k % c]]);
        let px = Tensor::from_fn(&[2, c, d], |k| {
            let (n, i, f) = (k / (c * d), (k / d) % c, k % d);
            x.data()[(n * c + perm[i]) * d + f]
        });
        let run = |a: &Tensor, x: &Tensor| {
            let mut g = Graph::new(Mode::Train);
            let xv = g.constant(x.clone());
            let y = gcn_layer(&mut g, &reg, "gcn", xv, &normalize_adjacency(a).unwrap()).unwrap();
            g.value(y).clone()
        };
        let y = run(&a, &x);
        let py = run(&pa, &px);
        for n in 0..2 {
            for i in 0..c {
                for f in 0..d {
                    let u = py.data()[(n * c + i) * d + f];
                    let v = y.data()[(n * c + perm[i]) * d + f];
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }
}
