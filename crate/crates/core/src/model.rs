//! Feature extractor φ (MLP into the open unit cube) and linear head ψ.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, Rng, Tape, Var};

/// Slope of the hidden leaky-ReLU.
pub const HIDDEN_SLOPE: f64 = 0.01;

/// Layer widths `[input, hidden.., N]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture(pub Vec<usize>);

impl Architecture {
    /// `input → 64 → 64 → 8`.
    pub fn default_for(input_dim: usize) -> Self {
        Architecture(vec![input_dim, 64, 64, 8])
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.0.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() < 3 {
            return Err(Error::config("arch", "need input, at least one hidden layer, and output"));
        }
        if let Some(i) = self.0.iter().position(|&w| w == 0) {
            return Err(Error::config("arch", format!("layer {i} has zero width")));
        }
        if self.latent_dim() < 2 {
            return Err(Error::config("arch", "representation dimension N must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `N × 1`
    pub weight: Matrix,
    /// `1 × 1`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub phi: FeatureExtractor,
    pub psi: ClassifierHead,
    pub init_seed: u64,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub phi: Vec<(Var, Var)>,
    pub psi: (Var, Var),
}

impl ModelVars {
    /// Rebuild handles from vars in checkpoint order: φ (weight, bias) pairs,
    /// then ψ weight and bias.
    pub fn from_flat(vars: &[Var]) -> Result<Self> {
        if vars.len() < 4 || vars.len() % 2 != 0 {
            return Err(Error::contract(format!("expected an even number ≥ 4 of vars, got {}", vars.len())));
        }
        let (phi, psi) = vars.split_at(vars.len() - 2);
        Ok(ModelVars {
            phi: phi.chunks(2).map(|c| (c[0], c[1])).collect(),
            psi: (psi[0], psi[1]),
        })
    }

    pub fn phi_vars(&self) -> Vec<Var> {
        self.phi.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn psi_vars(&self) -> Vec<Var> {
        vec![self.psi.0, self.psi.1]
    }

    /// φ gradients in parameter order.
    pub fn phi_grads(&self, g: &Gradients) -> Vec<Matrix> {
        self.phi_vars().into_iter().map(|v| g.wrt(v)).collect()
    }

    pub fn psi_grads(&self, g: &Gradients) -> Vec<Matrix> {
        self.psi_vars().into_iter().map(|v| g.wrt(v)).collect()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<ModelParams> {
    arch.validate()?;
    let mut glorot = |fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Matrix::zeros(fan_in, fan_out);
        for v in w.as_mut_slice() {
            *v = rng.uniform_range(-a, a);
        }
        w
    };
    let layers = arch
        .0
        .windows(2)
        .map(|w| Dense {
            weight: glorot(w[0], w[1]),
            bias: Matrix::zeros(1, w[1]),
        })
        .collect();
    let n = arch.latent_dim();
    let psi = ClassifierHead {
        weight: glorot(n, 1),
        bias: Matrix::zeros(1, 1),
    };
    Ok(ModelParams {
        arch: arch.clone(),
        phi: FeatureExtractor { layers },
        psi,
        init_seed: rng.seed(),
    })
}

impl ModelParams {
    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    /// Put every parameter on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let phi = self
            .phi
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let psi = (tape.param(self.psi.weight.clone()), tape.param(self.psi.bias.clone()));
        ModelVars { phi, psi }
    }

    pub fn phi_params_mut(&mut self) -> Vec<&mut Matrix> {
        self.phi
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn psi_params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.psi.weight, &mut self.psi.bias]
    }

    pub fn phi_params(&self) -> Vec<&Matrix> {
        self.phi.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn psi_params(&self) -> Vec<&Matrix> {
        vec![&self.psi.weight, &self.psi.bias]
    }

    /// All parameters in checkpoint order: φ layers (weight, bias), then ψ.
    pub fn flat_params(&self) -> Vec<&Matrix> {
        let mut v = self.phi_params();
        v.extend(self.psi_params());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|m| m.is_finite())
    }

    /// Representations `z = φ(x)` as plain values.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.constant(x.clone());
        let z = phi_forward(&mut tape, &vars, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Logits `ψ(φ(x))` as plain values.
    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.constant(x.clone());
        let z = phi_forward(&mut tape, &vars, xv)?;
        let l = psi_logit(&mut tape, &vars, z)?;
        Ok(tape.value(l).as_slice().to_vec())
    }
}

/// `φ(x)`: leaky-ReLU hidden layers, sigmoid output in `(0,1)^N`.
pub fn phi_forward(tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
    let expected = tape.value(vars.phi[0].0).rows();
    if tape.value(x).cols() != expected {
        return Err(Error::Shape {
            op: "phi_forward",
            left: tape.value(x).shape(),
            right: tape.value(vars.phi[0].0).shape(),
        });
    }
    let last = vars.phi.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in vars.phi.iter().enumerate() {
        let a = tape.matmul(h, w)?;
        let a = tape.add_row(a, b)?;
        h = if i == last {
            tape.sigmoid(a)
        } else {
            tape.leaky_relu(a, HIDDEN_SLOPE)
        };
    }
    Ok(h)
}

/// `ψ(z) = z·w + b`, one logit per row (`B × 1`).
pub fn psi_logit(tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
    let (w, b) = vars.psi;
    if tape.value(z).cols() != tape.value(w).rows() {
        return Err(Error::Shape {
            op: "psi_logit",
            left: tape.value(z).shape(),
            right: tape.value(w).shape(),
        });
    }
    let l = tape.matmul(z, w)?;
    tape.add_row(l, b)
}

/// JSON half of a checkpoint; the parameters go to a sibling `.bin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub arch: Architecture,
    pub init_seed: u64,
    pub run_seed: u64,
    pub epoch: usize,
    /// Shapes of the matrices stored in the binary file, in order.
    pub tensors: Vec<(usize, usize)>,
    pub binary: String,
}

/// Write `<stem>.json` and `<stem>.bin` (little-endian f64, checkpoint order).
pub fn save_checkpoint(model: &ModelParams, run_seed: u64, epoch: usize, dir: &Path, stem: &str) -> Result<()> {
    let params = model.flat_params();
    let manifest = CheckpointManifest {
        arch: model.arch.clone(),
        init_seed: model.init_seed,
        run_seed,
        epoch,
        tensors: params.iter().map(|m| m.shape()).collect(),
        binary: format!("{stem}.bin"),
    };
    let mut bytes = Vec::with_capacity(params.iter().map(|m| m.len() * 8).sum());
    for m in &params {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(&manifest.binary);
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    fs::write(&json_path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(ModelParams, CheckpointManifest)> {
    let json_path = dir.join(format!("{stem}.json"));
    if !json_path.exists() {
        return Err(Error::MissingArtifact(json_path));
    }
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    manifest.arch.validate()?;
    let bin_path = dir.join(&manifest.binary);
    if !bin_path.exists() {
        return Err(Error::MissingArtifact(bin_path));
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

    // Expected layout from the architecture.
    let arch = &manifest.arch;
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for w in arch.0.windows(2) {
        shapes.push((w[0], w[1]));
        shapes.push((1, w[1]));
    }
    shapes.push((arch.latent_dim(), 1));
    shapes.push((1, 1));
    if shapes != manifest.tensors {
        return Err(Error::contract(format!(
            "checkpoint tensor shapes {:?} do not match architecture {:?}",
            manifest.tensors, arch.0
        )));
    }
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != total * 8 {
        return Err(Error::contract(format!(
            "checkpoint binary has {} bytes, expected {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut mats = shapes
        .iter()
        .map(|&(r, c)| Matrix::from_vec(r, c, values.by_ref().take(r * c).collect()))
        .collect::<Result<Vec<Matrix>>>()?
        .into_iter();

    let n_layers = arch.0.len() - 1;
    let layers = (0..n_layers)
        .map(|_| Dense {
            weight: mats.next().expect("shape checked"),
            bias: mats.next().expect("shape checked"),
        })
        .collect();
    let psi = ClassifierHead {
        weight: mats.next().expect("shape checked"),
        bias: mats.next().expect("shape checked"),
    };
    let model = ModelParams {
        arch: arch.clone(),
        phi: FeatureExtractor { layers },
        psi,
        init_seed: manifest.init_seed,
    };
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(arch: &Architecture) -> ModelParams {
        let mut m = init(arch, &mut Rng::new(0)).unwrap();
        for p in m.phi_params_mut() {
            p.as_mut_slice().fill(0.0);
        }
        for p in m.psi_params_mut() {
            p.as_mut_slice().fill(0.0);
        }
        m
    }

    #[test]
    fn zero_weights_give_half() {
        let m = zeroed(&Architecture(vec![3, 5, 4]));
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.1, 0.2, 0.3]]);
        let z = m.embed(&x).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.5));
        let l = m.logits(&x).unwrap();
        assert_eq!(l, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward() {
        // x=[1,2]; hidden = leaky([1·0.5 + 2·(-1) + 0.1]) = leaky(-1.4) = -0.014
        // out = sigmoid(-0.014·2 + 0.3) = sigmoid(0.272), second unit sigmoid(-0.014·-1)
        let mut m = zeroed(&Architecture(vec![2, 1, 2]));
        m.phi.layers[0].weight = Matrix::column(&[0.5, -1.0]);
        m.phi.layers[0].bias = Matrix::scalar(0.1);
        m.phi.layers[1].weight = Matrix::row_vector(&[2.0, -1.0]);
        m.phi.layers[1].bias = Matrix::row_vector(&[0.3, 0.0]);
        let z = m.embed(&Matrix::row_vector(&[1.0, 2.0])).unwrap();
        let h = -1.4 * HIDDEN_SLOPE;
        let expect = [
            1.0 / (1.0 + (-(2.0 * h + 0.3f64)).exp()),
            1.0 / (1.0 + (-(-h)).exp()),
        ];
        assert!((z[(0, 0)] - expect[0]).abs() < 1e-15);
        assert!((z[(0, 1)] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn psi_dot_product() {
        let mut m = zeroed(&Architecture(vec![2, 3, 2]));
        m.psi.weight = Matrix::column(&[1.0, -1.0]);
        let mut t = Tape::new();
        let v = m.register(&mut t);
        let z = t.constant(Matrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.7], vec![0.5, 0.5]]));
        let l = psi_logit(&mut t, &v, z).unwrap();
        let got = t.value(l).as_slice().to_vec();
        let want = [0.8, -0.5, 0.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let m = init(&Architecture(vec![3, 4, 2]), &mut Rng::new(1)).unwrap();
        assert!(matches!(m.embed(&Matrix::zeros(2, 4)), Err(Error::Shape { .. })));
        let mut t = Tape::new();
        let v = m.register(&mut t);
        let z = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(psi_logit(&mut t, &v, z), Err(Error::Shape { .. })));
    }

    #[test]
    fn init_is_seeded() {
        let arch = Architecture::default_for(4);
        let a = init(&arch, &mut Rng::new(5)).unwrap();
        let b = init(&arch, &mut Rng::new(5)).unwrap();
        let c = init(&arch, &mut Rng::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.phi, c.phi);
        assert!(a.psi.bias.as_slice().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / (4 + 64) as f64).sqrt();
        assert!(a.phi.layers[0].weight.max_abs() <= bound);
    }

    #[test]
    fn invalid_architectures() {
        assert!(init(&Architecture(vec![4, 8]), &mut Rng::new(0)).is_err());
        assert!(init(&Architecture(vec![4, 0, 8]), &mut Rng::new(0)).is_err());
        assert!(init(&Architecture(vec![4, 8, 1]), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = init(&Architecture(vec![4, 6, 3]), &mut Rng::new(8)).unwrap();
        save_checkpoint(&m, 8, 3, dir.path(), "best").unwrap();
        let (back, manifest) = load_checkpoint(dir.path(), "best").unwrap();
        assert_eq!(manifest.epoch, 3);
        for (a, b) in m.flat_params().iter().zip(back.flat_params()) {
            let ab: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn missing_checkpoint_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path(), "best"), Err(Error::MissingArtifact(_))));
    }
}
