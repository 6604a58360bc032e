/// Central finite difference of `f` at `x0` with step `h`.
///
/// When the forward and backward one-sided slopes disagree by more than
/// `1e-3` relative, a ReLU kink lies inside the stencil and the central
/// difference is not an estimate of the derivative at `x0`; the step is then
/// shrunk by 100x (down to `1e-8`) until the slopes agree.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    let f0 = f(x0);
    let mut h = h;
    loop {
        let (fp, fm) = (f(x0 + h), f(x0 - h));
        let central = (fp - fm) / (2.0 * h);
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        let scale = fwd.abs().max(bwd.abs()).max(1e-12);
        if (fwd - bwd).abs() <= 1e-3 * scale || h <= 1e-8 {
            return central;
        }
        h /= 100.0;
    }
}
