//! Synthetic attraction/repulsion interface energies and the reward models
//! built on them.
//!
//! Every residue exposes a side-chain (sc) and a backbone (bb) interaction
//! point. The pair potential is a Lennard-Jones split with unit well depth
//! and contact radius 4 A, smoothly switched off between 10 and 12 A.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CdrState, ComplexInstance};
use crate::scalar::{dist3, Real, Vec3};

pub const SIGMA: f64 = 4.0;
pub const REPULSION_CAP: f64 = 100.0;
pub const SWITCH_ON: f64 = 10.0;
pub const CUTOFF: f64 = 12.0;
pub const MARGIN_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport<F = f64> {
    pub e_att_per_res: Vec<F>,
    pub e_rep_per_res: Vec<F>,
    pub e_att_total: F,
    pub e_rep_total: F,
    /// CDR-internal total-energy proxy.
    pub e_intra: F,
    /// Interface binding-energy proxy, `e_att_total + e_rep_total`.
    pub dg_proxy: F,
}

impl<F: Real> EnergyReport<F> {
    pub fn zero(m: usize) -> Self {
        EnergyReport {
            e_att_per_res: vec![F::zero(); m],
            e_rep_per_res: vec![F::zero(); m],
            e_att_total: F::zero(),
            e_rep_total: F::zero(),
            e_intra: F::zero(),
            dg_proxy: F::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardVector<F = f64> {
    pub r_att: F,
    pub r_rep: F,
}

/// Objective weights `(w_att, w_rep)`, nonnegative and summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights<F = f64> {
    pub att: F,
    pub rep: F,
}

impl<F: Real> Weights<F> {
    pub fn new(att: F, rep: F) -> Result<Self> {
        let w = Weights { att, rep };
        w.validate()?;
        Ok(w)
    }

    /// Normalised weights from a ratio such as `1:3`.
    pub fn from_ratio(att: F, rep: F) -> Result<Self> {
        let s = att + rep;
        if !(att >= F::zero() && rep >= F::zero() && s > F::zero()) {
            return Err(Error::Config(format!("invalid weight ratio {att:?}:{rep:?}")));
        }
        Self::new(att / s, rep / s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.att >= F::zero() && self.rep >= F::zero()) {
            return Err(Error::Config("objective weights must be nonnegative".into()));
        }
        if (self.att + self.rep - F::one()).abs() > F::lit(1e-9) {
            return Err(Error::Config(format!(
                "objective weights must sum to 1, got {:?}",
                self.att + self.rep
            )));
        }
        Ok(())
    }
}

fn switch<F: Real>(d: F) -> F {
    let on = F::lit(SWITCH_ON);
    let off = F::lit(CUTOFF);
    if d <= on {
        F::one()
    } else if d >= off {
        F::zero()
    } else {
        let x = (d - on) / (off - on);
        F::one() - x * x * (F::lit(3.0) - F::lit(2.0) * x)
    }
}

/// `(ep_att, ep_rep)` at distance `d`: `-min((s/d)^6, 1)` and
/// `min((s/d)^12, 100)`, both scaled by a C1 switch that reaches zero at the
/// 12 A cutoff. Attraction holds at the well depth inside the contact radius,
/// so overlapping points cannot buy unbounded negative energy.
pub fn pair_potential<F: Real>(d: F) -> Result<(F, F)> {
    if !(d > F::zero()) {
        return Err(Error::Domain(d.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(pair_terms(d))
}

#[inline]
fn pair_terms<F: Real>(d: F) -> (F, F) {
    if d >= F::lit(CUTOFF) {
        return (F::zero(), F::zero());
    }
    let r = F::lit(SIGMA) / d.max(F::lit(1e-6));
    let r6 = r.powi(6);
    let s = switch(d);
    let rep = (r6 * r6).min(F::lit(REPULSION_CAP));
    (-r6.min(F::one()) * s, rep * s)
}

/// Interface and intra-CDR energies from raw interaction points.
///
/// `cdr[j] = (sc_j, bb_j)`, `antigen[i] = (sc_i, bb_i)`.
/// Attraction counts sc_j against both antigen points; repulsion counts
/// sc_j against both and bb_j against both with weight 2. The intra term
/// sums attraction plus repulsion over sc pairs at least two apart in
/// sequence.
pub fn interface_energies<F: Real>(cdr: &[(Vec3<F>, Vec3<F>)], antigen: &[(Vec3<F>, Vec3<F>)]) -> EnergyReport<F> {
    let m = cdr.len();
    let two = F::lit(2.0);
    let mut report = EnergyReport::zero(m);
    for (j, &(sc_j, bb_j)) in cdr.iter().enumerate() {
        let mut att = F::zero();
        let mut rep = F::zero();
        for &(sc_i, bb_i) in antigen {
            let (a1, r1) = pair_terms(dist3(sc_j, sc_i));
            let (a2, r2) = pair_terms(dist3(sc_j, bb_i));
            let (_, r3) = pair_terms(dist3(bb_j, sc_i));
            let (_, r4) = pair_terms(dist3(bb_j, bb_i));
            att = att + a1 + a2;
            rep = rep + r1 + r2 + two * (r3 + r4);
        }
        report.e_att_per_res[j] = att;
        report.e_rep_per_res[j] = rep;
    }
    let mut intra = F::zero();
    for i in 0..m {
        for j in (i + 2)..m {
            let (a, r) = pair_terms(dist3(cdr[i].0, cdr[j].0));
            intra = intra + a + r;
        }
    }
    report.e_att_total = report.e_att_per_res.iter().fold(F::zero(), |s, &v| s + v);
    report.e_rep_total = report.e_rep_per_res.iter().fold(F::zero(), |s, &v| s + v);
    report.e_intra = intra;
    report.dg_proxy = report.e_att_total + report.e_rep_total;
    report
}

pub fn cdr_ag_energies(complex: &ComplexInstance, cdr: &CdrState) -> EnergyReport {
    let pts: Vec<(Vec3, Vec3)> = cdr.residues.iter().map(|r| (r.sc_point(), r.bb_point())).collect();
    interface_energies(&pts, &complex.antigen_sites())
}

/// Sign-flipped totals: lower energy, higher reward.
pub fn rewards<F: Real>(report: &EnergyReport<F>) -> RewardVector<F> {
    RewardVector {
        r_att: -report.e_att_total,
        r_rep: -report.e_rep_total,
    }
}

/// `w_att r_att + w_rep r_rep`.
pub fn collective_reward<F: Real>(r: &RewardVector<F>, w: &Weights<F>) -> Result<F> {
    w.validate()?;
    Ok(w.att * r.r_att + w.rep * r.r_rep)
}

/// `ln(max(rhat_w - rhat_l, 1e-6))`; the winner must be strictly above the loser.
pub fn reward_margin<F: Real>(rhat_w: F, rhat_l: F) -> Result<F> {
    if !(rhat_w > rhat_l) {
        return Err(Error::Ordering {
            winner: rhat_w.to_f64().unwrap_or(f64::NAN),
            loser: rhat_l.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((rhat_w - rhat_l).max(F::lit(MARGIN_FLOOR)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{exp_map, uniform_rotation, AxisAngle, Rotation};
    use crate::model::fixtures::*;
    use crate::model::{AminoAcid, ContextResidue, ResidueState, RigidMotion, Role};
    use rand::Rng as _;

    #[test]
    fn pair_potential_reference_points() {
        let (a, r) = pair_potential(SIGMA).unwrap();
        assert_eq!((a, r), (-1.0, 1.0));
        let (a, r) = pair_potential(2.0 * SIGMA).unwrap();
        assert!((a + 1.0 / 64.0).abs() < 1e-15);
        assert!((r - 1.0 / 4096.0).abs() < 1e-15);
        assert_eq!(pair_potential(12.0).unwrap(), (0.0, 0.0));
        assert_eq!(pair_potential(12.5).unwrap(), (0.0, 0.0));
        assert_eq!(pair_potential(0.5).unwrap().1, REPULSION_CAP);
        assert!(pair_potential(0.0).is_err());
        assert!(pair_potential(-1.0).is_err());
    }

    #[test]
    fn approach_is_monotone() {
        let mut prev = pair_potential(CUTOFF).unwrap();
        let n = 2000;
        for k in 1..=n {
            let d = CUTOFF - (CUTOFF - SIGMA) * k as f64 / n as f64;
            let cur = pair_potential(d).unwrap();
            assert!(cur.0 < prev.0, "att not decreasing at {d}");
            assert!(cur.1 > prev.1, "rep not increasing at {d}");
            prev = cur;
        }
    }

    #[test]
    fn attraction_is_bounded_inside_contact() {
        for d in [0.01, 0.5, 2.0, 3.999] {
            let (a, r) = pair_potential(d).unwrap();
            assert_eq!(a, -1.0);
            assert!(r > 1.0 && r <= REPULSION_CAP);
        }
        // the summed pair energy never drops below the LJ well depth
        for k in 1..4000 {
            let (a, r) = pair_potential(k as f64 * 0.003).unwrap();
            assert!(a + r >= -0.25 - 1e-12);
        }
    }

    fn lone_antigen(bb: Vec3, sc_far: bool) -> ComplexInstance {
        // A glycine antigen has sc == bb; a tryptophan pointing away moves sc
        // out of range when requested.
        let (aa, orient) = if sc_far {
            // W reach 3.4 A; rotate local z to -x
            (AminoAcid::from_letter('W').unwrap(), exp_map(AxisAngle([0.0, -std::f64::consts::FRAC_PI_2, 0.0])))
        } else {
            (AminoAcid::from_letter('G').unwrap(), Rotation::identity())
        };
        let fw = |x: Vec3| ContextResidue {
            role: Role::Framework,
            state: ResidueState::new(AminoAcid::new(0).unwrap(), x, Rotation::identity()),
        };
        ComplexInstance::new(
            "lone",
            vec![
                fw([-100.0, 0.0, 0.0]),
                fw([-90.0, 0.0, 0.0]),
                ContextResidue {
                    role: Role::Antigen,
                    state: ResidueState::new(aa, bb, orient),
                },
            ],
            (1, 1),
        )
        .unwrap()
    }

    #[test]
    fn glycine_at_contact_distance_trace() {
        // antigen sc point beyond the cutoff, bb point at sigma
        let gly = AminoAcid::from_letter('G').unwrap();
        let cdr = CdrState::new(vec![ResidueState::new(gly, [0.0, 0.0, 0.0], Rotation::identity())]);
        let sites = vec![([20.0, 0.0, 0.0], [SIGMA, 0.0, 0.0])];
        let pts: Vec<(Vec3, Vec3)> = cdr.residues.iter().map(|r| (r.sc_point(), r.bb_point())).collect();
        let rep = interface_energies(&pts, &sites);
        assert_eq!(rep.e_att_per_res[0], -1.0);
        assert_eq!(rep.e_rep_per_res[0], 3.0);
        assert_eq!(rep.dg_proxy, 2.0);
        assert_eq!(rep.e_intra, 0.0);
    }

    #[test]
    fn far_cdr_has_zero_interface_energy() {
        let c = lone_antigen([0.0, 0.0, 0.0], true);
        let cdr = toy_cdr(3).apply_rigid(&Rotation::identity(), [0.0, 50.0, 0.0]);
        let rep = cdr_ag_energies(&c, &cdr);
        assert_eq!(rep.e_att_total, 0.0);
        assert_eq!(rep.e_rep_total, 0.0);
        assert_eq!(rep.dg_proxy, 0.0);
    }

    /// Straightforward double loop over all interaction-point pairs.
    fn reference_evaluator(c: &ComplexInstance, cdr: &CdrState) -> (f64, f64, f64) {
        let lj = |a: Vec3, b: Vec3| {
            let d = dist3(a, b);
            if d >= 12.0 {
                return (0.0, 0.0);
            }
            let s = if d <= 10.0 {
                1.0
            } else {
                let x = (d - 10.0) / 2.0;
                1.0 - 3.0 * x * x + 2.0 * x * x * x
            };
            let q = (4.0 / d).powi(6);
            (-q.min(1.0) * s, (q * q).min(100.0) * s)
        };
        let (mut att, mut rep, mut intra) = (0.0, 0.0, 0.0);
        for r in &cdr.residues {
            for a in c.antigen() {
                for (p, wr) in [(r.sc_point(), 1.0), (r.x, 2.0)] {
                    for q in [a.sc_point(), a.x] {
                        let (ea, er) = lj(p, q);
                        if wr == 1.0 {
                            att += ea;
                        }
                        rep += wr * er;
                    }
                }
            }
        }
        for i in 0..cdr.len() {
            for j in 0..cdr.len() {
                if j >= i + 2 {
                    let (ea, er) = lj(cdr.residues[i].sc_point(), cdr.residues[j].sc_point());
                    intra += ea + er;
                }
            }
        }
        (att, rep, intra)
    }

    #[test]
    fn totals_match_double_loop_evaluator() {
        let mut rng = crate::rng::from_seed(77);
        for _ in 0..25 {
            let c = toy_complex(6);
            let mut cdr = toy_cdr(6);
            for r in cdr.residues.iter_mut() {
                r.x = [
                    rng.random_range(-6.0..6.0),
                    rng.random_range(2.0..12.0),
                    rng.random_range(-4.0..4.0),
                ];
                r.orient = uniform_rotation(&mut rng);
                r.aa = AminoAcid::new(rng.random_range(0..20)).unwrap();
            }
            let rep = cdr_ag_energies(&c, &cdr);
            let (att, repl, intra) = reference_evaluator(&c, &cdr);
            assert!((rep.e_att_total - att).abs() < 1e-9);
            assert!((rep.e_rep_total - repl).abs() < 1e-9);
            assert!((rep.e_intra - intra).abs() < 1e-9);
            let s: f64 = rep.e_att_per_res.iter().sum();
            assert!((s - rep.e_att_total).abs() < 1e-9);
            assert!(rep.e_att_per_res.iter().all(|&v| v <= 0.0));
            assert!(rep.e_rep_per_res.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn energies_are_rigid_invariant() {
        let c = toy_complex(5);
        let cdr = toy_cdr(5);
        let mut rng = crate::rng::from_seed(8);
        let base = cdr_ag_energies(&c, &cdr);
        for _ in 0..10 {
            let r: Rotation = uniform_rotation(&mut rng);
            let t = [rng.random_range(-50.0..50.0), 3.0, -7.0];
            let moved = cdr_ag_energies(&c.apply_rigid(&r, t), &cdr.apply_rigid(&r, t));
            assert!((moved.e_att_total - base.e_att_total).abs() < 1e-9);
            assert!((moved.e_rep_total - base.e_rep_total).abs() < 1e-9);
            assert!((moved.e_intra - base.e_intra).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_sign_convention() {
        let z = EnergyReport::<f64>::zero(3);
        assert_eq!(rewards(&z), RewardVector { r_att: 0.0, r_rep: 0.0 });
        let mut rep = EnergyReport::<f64>::zero(1);
        rep.e_att_total = -18.34;
        rep.e_rep_total = 15.77;
        let r = rewards(&rep);
        assert_eq!(r.r_att, 18.34);
        assert_eq!(r.r_att + rep.e_att_total, 0.0);
        assert_eq!(r.r_rep + rep.e_rep_total, 0.0);
    }

    #[test]
    fn collective_reward_cases() {
        let r = RewardVector { r_att: 4.0, r_rep: 8.0 };
        assert_eq!(collective_reward(&r, &Weights::new(1.0, 0.0).unwrap()).unwrap(), 4.0);
        let w = Weights::from_ratio(1.0, 3.0).unwrap();
        assert_eq!(w, Weights { att: 0.25, rep: 0.75 });
        assert_eq!(collective_reward(&r, &w).unwrap(), 7.0);
        let shifted = RewardVector { r_att: 4.0 + 2.5, r_rep: 8.0 + 2.5 };
        assert!((collective_reward::<f64>(&shifted, &w).unwrap() - 9.5).abs() < 1e-12);
        assert!(Weights::new(0.5, 0.6).is_err());
        assert!(collective_reward(&r, &Weights { att: 0.7, rep: 0.7 }).is_err());
    }

    #[test]
    fn reward_margin_cases() {
        assert_eq!(reward_margin(2.0, 1.0).unwrap(), 0.0);
        assert!((reward_margin(std::f64::consts::E, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((reward_margin(1.0 + 1e-9, 1.0).unwrap() - (1e-6f64).ln()).abs() < 1e-12);
        assert!(reward_margin(1.0, 1.0).is_err());
        assert!(reward_margin(0.0, 1.0).is_err());
    }
}
