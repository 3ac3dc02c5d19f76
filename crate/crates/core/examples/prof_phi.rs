use condwalk_core::env::EnvSpec;
use condwalk_core::kernel::weighted_l2_check;
use std::time::Instant;

fn main() {
    let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
    for eps in [1e-2, 1e-3] {
        let t0 = Instant::now();
        let (w, p) = weighted_l2_check(&spec, eps, 1, 7, 1e-3, 1e-8).unwrap();
        println!("eps {eps}: {:?} per env; E[bphi2]={:.4} E[b]={:.4}", t0.elapsed(), w.value, p.value);
    }
}
