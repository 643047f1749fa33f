mod common;

use stereoqual::InputLayout;

#[test]
fn analytic_gradients_match_finite_differences() {
    for layout in [InputLayout::Stereo, InputLayout::StereoNoMid, InputLayout::Mono] {
        let r = common::check_gradients(layout, 6, 11);
        assert!(r.tensors > 40, "{} trainable tensors", r.tensors);
        assert!(r.within * 100 >= r.checked * 99, "{layout:?}: {}/{} within tolerance", r.within, r.checked);
        assert!(r.max_err < 1e-3, "{layout:?}: max relative error {:.3e}", r.max_err);
    }
}
