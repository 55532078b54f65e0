mod common;

use common::gradcheck;
use hsv_retinex::network::OutputActivation;

#[test]
fn loss_gradients_match_finite_differences() {
    let e = gradcheck::loss_gradients(21, 3);
    assert!(e.worst() < 1e-6, "{e:?}");
}

#[test]
fn network_gradients_match_finite_differences() {
    for (act, seed) in [
        (OutputActivation::Softplus, 5),
        (OutputActivation::ScaledSigmoid { max: 4.0 }, 6),
    ] {
        let worst = gradcheck::network_gradients(act, seed);
        assert!(worst <= 1e-6, "{act:?}: worst relative error {worst}");
    }
}
