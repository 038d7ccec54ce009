// scratch probe
use gear_core::net::{init_params, ActivationKind};
use gear_core::oracle::{fd_geometry_full, FdConfig};
use gear_core::geometry::InverseMode;
use gear_core::tensor::Tensor;

fn main() {
    let mlp = init_params(&[3, 3, 3], ActivationKind::Silu, 5).unwrap();
    let z = Tensor::vector(&[0.3, -0.2, 0.6]).unwrap();
    for h3 in [1e-2, 5e-3, 2e-3, 1e-3] {
        let mut cfg = FdConfig::default();
        cfg.steps[2] = h3;
        let (mb, cb) = fd_geometry_full(&mlp, None, &z, InverseMode::Exact, &cfg).unwrap();
        println!(
            "h3={h3:.0e} |g|={:.3} |dg|={:.3} |ddg|={:.3} |gamma|={:.3} |dgamma|={:.3} |riem|={:.3e} scalar={:.3e}",
            mb.g.max_abs(), mb.dg.max_abs(), mb.ddg.max_abs(),
            cb.gamma.max_abs(), cb.dgamma.max_abs(), cb.riemann.max_abs(), cb.scalar
        );
    }
}
