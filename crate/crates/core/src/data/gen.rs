use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_map, frame_from_two_vectors, uniform_rotation, AxisAngle, Rotation};
use crate::model::{AminoAcid, ComplexInstance, ContextResidue, ResidueState, RigidMotion, Role, NUM_TYPES};
use crate::rng::{self, Rng};
use crate::scalar::{add3, dist3, normalize3, scale3, Vec3};

/// Ideal C-alpha spacing along a chain, in angstrom.
pub const CA_SPACING: f64 = 3.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n_antigen_res: usize,
    pub cdr_len: usize,
    /// Distance between the two framework anchors, angstrom.
    pub anchor_gap: f64,
    /// Length scale of the epitope placement, angstrom.
    pub box_scale: f64,
    /// Framework residues on each side of the CDR, anchors included.
    pub flank: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_antigen_res: 12,
            cdr_len: 8,
            anchor_gap: 10.0,
            box_scale: 15.0,
            flank: 3,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_antigen_res == 0 || self.cdr_len == 0 || self.flank == 0 {
            return Err(Error::Config("data.gen counts must be positive".into()));
        }
        if !(self.anchor_gap > 0.0 && self.box_scale > 0.0) {
            return Err(Error::Config("data.gen lengths must be positive".into()));
        }
        Ok(())
    }
}

fn random_type(rng: &mut Rng) -> AminoAcid {
    AminoAcid::new(rng.random_range(0..NUM_TYPES)).expect("type index in range")
}

fn gaussian3(rng: &mut Rng, sd: f64) -> Vec3 {
    let g = |rng: &mut Rng| -> f64 { rng.sample(StandardNormal) };
    [sd * g(rng), sd * g(rng), sd * g(rng)]
}

/// Orientation whose local z axis is `normal`, with a random twist about it.
fn facing(normal: Vec3, rng: &mut Rng) -> Rotation {
    let n = normalize3(normal);
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    // frame_from_two_vectors puts `n` on the first axis; cycle it onto z
    let f = frame_from_two_vectors(n, helper);
    let to_z = Rotation::from_columns([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]);
    let twist = exp_map(AxisAngle([0.0, 0.0, rng.random::<f64>() * std::f64::consts::TAU]));
    f.compose(&to_z).compose(&twist)
}

/// Synthetic complex: an antigen epitope on a spherical cap facing two
/// framework anchors, with the CDR span between the anchors. The whole
/// complex is placed by a random rigid motion.
pub fn gen_complex(id: &str, p: &GenParams, seed: u64) -> Result<ComplexInstance> {
    p.validate()?;
    let mut rng = rng::from_seed(seed);
    let half = p.anchor_gap / 2.0;

    let mut framework = Vec::with_capacity(2 * p.flank);
    let away = normalize3([-0.6, -0.8, 0.0]);
    for k in (0..p.flank).rev() {
        let x = add3([-half, 0.0, 0.0], scale3(away, CA_SPACING * k as f64));
        framework.push((x, [0.0, -1.0, 0.0]));
    }
    let away = [-away[0], away[1], 0.0];
    for k in 0..p.flank {
        let x = add3([half, 0.0, 0.0], scale3(away, CA_SPACING * k as f64));
        framework.push((x, [0.0, -1.0, 0.0]));
    }

    let center = [0.0, 4.0 / 3.0 * p.box_scale, 0.0];
    let radius = 2.0 / 3.0 * p.box_scale;
    let cap = 50f64.to_radians();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut antigen: Vec<(Vec3, Vec3)> = Vec::with_capacity(p.n_antigen_res);
    let n = p.n_antigen_res;
    for k in 0..n {
        // Fibonacci points on the cap around -y, then jittered
        let cos_min = cap.cos();
        let c = 1.0 - (1.0 - cos_min) * (k as f64 + 0.5) / n as f64;
        let s = (1.0 - c * c).max(0.0).sqrt();
        let phi = golden * k as f64 + rng.random::<f64>() * 0.3;
        let dir = normalize3(add3([s * phi.cos(), -c, s * phi.sin()], gaussian3(&mut rng, 0.03)));
        let x = add3(center, scale3(dir, radius));
        antigen.push((x, dir));
    }
    for i in 0..n {
        for j in 0..i {
            if dist3(antigen[i].0, antigen[j].0) <= 1.5 {
                return Err(Error::Data(format!("{id}: epitope residues {i} and {j} overlap")));
            }
        }
    }

    let mut context = Vec::with_capacity(framework.len() + n);
    for (x, normal) in framework {
        let o = facing(normal, &mut rng);
        context.push(ContextResidue {
            role: Role::Framework,
            state: ResidueState::new(random_type(&mut rng), x, o),
        });
    }
    for (x, dir) in antigen {
        let o = facing(dir, &mut rng);
        context.push(ContextResidue {
            role: Role::Antigen,
            state: ResidueState::new(random_type(&mut rng), x, o),
        });
    }
    let complex = ComplexInstance::new(id, context, (p.flank, p.cdr_len))?;
    let rot: Rotation = uniform_rotation(&mut rng);
    let t = gaussian3(&mut rng, 20.0);
    Ok(complex.apply_rigid(&rot, t))
}
