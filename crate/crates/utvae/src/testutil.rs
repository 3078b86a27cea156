//! Helpers shared by tests in several modules.

use crate::datagen::{outcome_rate, posterior_z1, Dataset, SyntheticConfig};
use crate::diffcore::Tensor;
use crate::networks::{ArchConfig, CevaeModel};

pub(crate) fn set_param(model: &mut CevaeModel, name: &str, value: Tensor) {
    let id = model.store().find(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
    assert_eq!(model.store().value(id).shape(), value.shape(), "shape mismatch for `{name}`");
    *model.store_mut().value_mut(id) = value;
}

/// A model hand-wired to reproduce the synthetic ground truth exactly,
/// provided the covariate it is fed is v = p(z=1|x) rather than x
/// itself (the exact posterior is a sigmoid of a quadratic, which an
/// ELU net cannot express). The inference arms pass v through with the
/// std pinned at the floor, and each outcome arm computes the affine
/// blend v * rate(t,1) + (1-v) * rate(t,0).
pub(crate) fn oracle_wired_model() -> CevaeModel {
    let arch = ArchConfig {
        x_dim: 1,
        x_binary_mask: vec![false],
        z_dim: 1,
        hidden_layers: 1,
        hidden_units: 4,
        y_is_binary: false,
    };
    let mut model = CevaeModel::zeroed(arch);
    let first_unit = |in_dim: usize| Tensor::from_fn(in_dim, 4, |i, j| (i == 0 && j == 0) as u8 as f64);
    for arm in ["inf.z.arm0", "inf.z.arm1"] {
        set_param(&mut model, &format!("{arm}.h.w"), first_unit(2));
        set_param(&mut model, &format!("{arm}.out.w"), Tensor::from_fn(4, 2, |i, j| (i == 0 && j == 0) as u8 as f64));
        set_param(&mut model, &format!("{arm}.out.b"), Tensor::row_vec(&[0.0, -40.0]));
    }
    for (arm, t) in [("gen.y.arm0", 0u8), ("gen.y.arm1", 1u8)] {
        let slope = outcome_rate(t, 1) - outcome_rate(t, 0);
        let intercept = outcome_rate(t, 0);
        set_param(&mut model, &format!("{arm}.h.w"), first_unit(1));
        set_param(&mut model, &format!("{arm}.out.w"), Tensor::from_fn(4, 2, |i, j| {
            if i == 0 && j == 0 { slope } else { 0.0 }
        }));
        set_param(&mut model, &format!("{arm}.out.b"), Tensor::row_vec(&[intercept, 0.0]));
    }
    model
}

/// The covariate the wired model expects: v_i = p(z=1|x_i).
pub(crate) fn posterior_covariate(ds: &Dataset, cfg: &SyntheticConfig) -> Tensor {
    Tensor::from_fn(ds.n(), 1, |i, _| posterior_z1(ds.x.get(i, 0), cfg))
}

/// The dataset restricted to the wired model's input convention.
pub(crate) fn with_posterior_covariate(ds: &Dataset, cfg: &SyntheticConfig) -> Dataset {
    let mut out = ds.clone();
    out.x = posterior_covariate(ds, cfg);
    out
}
